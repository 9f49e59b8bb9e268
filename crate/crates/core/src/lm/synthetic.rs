use std::hash::{Hash, Hasher};

use super::{check_context, LanguageModel, LmError, TokenDistribution, TokenId, Vocabulary};

/// Every token, EOS included, gets probability `1 / |A ∪ {eos}|`.
#[derive(Debug, Clone)]
pub struct UniformLm {
    vocab: Vocabulary,
}

impl UniformLm {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl LanguageModel for UniformLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, LmError> {
        check_context(&self.vocab, context)?;
        Ok(TokenDistribution::uniform(self.vocab.len()))
    }
}

/// Context-independent model with a fixed next-token distribution.
#[derive(Debug, Clone)]
pub struct UnigramLm {
    vocab: Vocabulary,
    dist: TokenDistribution,
}

impl UnigramLm {
    /// `probs` is indexed by token id and must sum to one.
    pub fn new(vocab: Vocabulary, probs: &[f64]) -> Result<Self, LmError> {
        if probs.len() != vocab.len() {
            return Err(LmError::VocabularyMismatch {
                expected: vocab.len(),
                got: probs.len(),
            });
        }
        let dist = TokenDistribution::new(probs.iter().map(|p| p.ln()).collect())?;
        Ok(Self { vocab, dist })
    }
}

impl LanguageModel for UnigramLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, LmError> {
        check_context(&self.vocab, context)?;
        Ok(self.dist.clone())
    }
}

/// Deterministic pseudo-random conditionals keyed on the last `window`
/// tokens. Used for benchmarks over large vocabularies where no corpus
/// exists.
#[derive(Debug, Clone)]
pub struct HashedLm {
    vocab: Vocabulary,
    window: usize,
    seed: u64,
    eos_logit: f64,
}

impl HashedLm {
    pub fn new(vocab: Vocabulary, window: usize, seed: u64) -> Self {
        Self {
            vocab,
            window,
            seed,
            eos_logit: 2.0,
        }
    }

    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

impl LanguageModel for HashedLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, LmError> {
        check_context(&self.vocab, context)?;
        let start = context.len().saturating_sub(self.window);
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.seed.hash(&mut h);
        context[start..].hash(&mut h);
        let key = h.finish();
        let logits: Vec<f64> = (0..self.vocab.len() as u64)
            .map(|i| {
                if i as TokenId == self.vocab.eos() {
                    self.eos_logit
                } else {
                    let u = (Self::mix(key ^ Self::mix(i)) >> 11) as f64 / (1u64 << 53) as f64;
                    4.0 * u
                }
            })
            .collect();
        Ok(TokenDistribution::from_log_weights(logits)?.0)
    }
}
