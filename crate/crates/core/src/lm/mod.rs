//! Autoregressive language models over a byte-decodable token vocabulary.
//!
//! A [`LanguageModel`] exposes `p(x' | context)` over `A ∪ {eos}` as a
//! [`TokenDistribution`] in natural-log space. Probabilities of whole
//! sequences factor into per-step conditionals, see
//! [`LanguageModel::sequence_logprob`].

mod ngram;
mod remote;
mod synthetic;

pub use ngram::{NgramError, NgramModel, NgramTrainer, NGRAM_FORMAT_VERSION};
pub use remote::{RemoteLm, RemoteReply};
pub use synthetic::{HashedLm, UniformLm, UnigramLm};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense token identifier. EOS is an ordinary id flagged by the vocabulary.
pub type TokenId = u32;

/// Sum-of-probabilities tolerance for a valid [`TokenDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("context of {len} tokens exceeds model horizon of {max}")]
    Horizon { len: usize, max: usize },
    #[error("context contains the end-of-sequence token at position {0}")]
    EosInContext(usize),
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(TokenId),
    #[error("context {0:?} was never observed in training and smoothing is 0")]
    Coverage(Vec<TokenId>),
    #[error("distribution does not normalize: total probability {0}")]
    NotNormalized(f64),
    #[error("distribution has {got} entries, vocabulary has {expected}")]
    VocabularyMismatch { expected: usize, got: usize },
    #[error("remote endpoint unreachable: {0}")]
    Network(String),
    #[error("malformed remote payload: {0}")]
    Payload(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabularyError {
    #[error("vocabulary has no tokens besides EOS")]
    Empty,
    #[error("token {0} decodes to an empty byte string")]
    EmptyToken(TokenId),
}

/// Token ids `0..len()` with their byte decodings. The EOS id decodes to
/// nothing and is not part of `A`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    eos: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary from non-EOS token byte strings; EOS gets the
    /// next free id.
    pub fn new(tokens: Vec<Vec<u8>>) -> Result<Self, VocabularyError> {
        if tokens.is_empty() {
            return Err(VocabularyError::Empty);
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(VocabularyError::EmptyToken(i as TokenId));
        }
        let eos = tokens.len() as TokenId;
        let mut tokens = tokens;
        tokens.push(Vec::new());
        Ok(Self { tokens, eos })
    }

    /// One token per byte of `alphabet`, in the given order.
    pub fn bytes(alphabet: &[u8]) -> Result<Self, VocabularyError> {
        Self::new(alphabet.iter().map(|&b| vec![b]).collect())
    }

    /// A fixed list of (possibly multi-byte) tokens, e.g. `["a", "ab", "b"]`.
    pub fn merged<S: AsRef<[u8]>>(tokens: &[S]) -> Result<Self, VocabularyError> {
        Self::new(tokens.iter().map(|t| t.as_ref().to_vec()).collect())
    }

    /// Number of ids including EOS.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn is_eos(&self, id: TokenId) -> bool {
        id == self.eos
    }

    /// Decoded bytes of a token; empty for EOS.
    pub fn bytes_of(&self, id: TokenId) -> &[u8] {
        &self.tokens[id as usize]
    }

    /// Non-EOS tokens with their ids.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i as TokenId != self.eos)
            .map(|(i, t)| (i as TokenId, t.as_slice()))
    }

    /// Concatenated bytes of a token sequence (EOS contributes nothing).
    pub fn decode(&self, tokens: &[TokenId]) -> Vec<u8> {
        tokens
            .iter()
            .flat_map(|&t| self.bytes_of(t).iter().copied())
            .collect()
    }

    /// Map from byte string to id, for byte-level vocabularies.
    pub fn lookup(&self) -> HashMap<&[u8], TokenId> {
        self.iter().map(|(i, b)| (b, i)).collect()
    }

    /// Greedy longest-match tokenization. Returns `None` if some byte cannot
    /// be covered.
    pub fn encode(&self, bytes: &[u8]) -> Option<Vec<TokenId>> {
        let lookup = self.lookup();
        let longest = self.iter().map(|(_, b)| b.len()).max().unwrap_or(0);
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let max = longest.min(bytes.len() - pos);
            let (len, id) = (1..=max)
                .rev()
                .find_map(|l| lookup.get(&bytes[pos..pos + l]).map(|&id| (l, id)))?;
            out.push(id);
            pos += len;
        }
        Some(out)
    }
}

/// Natural-log probabilities indexed by token id (EOS included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    logprobs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates normalization to within [`NORMALIZATION_TOLERANCE`].
    pub fn new(logprobs: Vec<f64>) -> Result<Self, LmError> {
        let total = log_sum_exp(&logprobs).exp();
        if logprobs.iter().any(|l| l.is_nan() || *l > 1e-12)
            || (total - 1.0).abs() > NORMALIZATION_TOLERANCE
        {
            return Err(LmError::NotNormalized(total));
        }
        Ok(Self { logprobs })
    }

    /// Renormalizes arbitrary log-weights; returns the distribution and the
    /// log of the original total mass.
    pub fn from_log_weights(mut weights: Vec<f64>) -> Result<(Self, f64), LmError> {
        let total = log_sum_exp(&weights);
        if !total.is_finite() {
            return Err(LmError::NotNormalized(total.exp()));
        }
        for w in weights.iter_mut() {
            *w -= total;
        }
        Ok((Self { logprobs: weights }, total))
    }

    pub fn uniform(n: usize) -> Self {
        let lp = -(n as f64).ln();
        Self {
            logprobs: vec![lp; n],
        }
    }

    pub fn logprob(&self, id: TokenId) -> f64 {
        self.logprobs[id as usize]
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.logprobs[id as usize].exp()
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }
}

/// Autoregressive model `p(x' | x)`. Implementations must be deterministic
/// and safe for concurrent queries.
pub trait LanguageModel: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Conditional distribution over `A ∪ {eos}` given an EOS-free context.
    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, LmError>;

    /// Sum of per-step conditional log-probabilities. Without a trailing EOS
    /// this is the prefix log-probability.
    fn sequence_logprob(&self, tokens: &[TokenId]) -> Result<f64, LmError> {
        let eos = self.vocabulary().eos();
        if let Some(pos) = tokens.iter().position(|&t| t == eos) {
            if pos + 1 != tokens.len() {
                return Err(LmError::EosInContext(pos));
            }
        }
        let mut total = 0.0;
        for t in 0..tokens.len() {
            let dist = self.next_distribution(&tokens[..t])?;
            total += dist.logprob(tokens[t]);
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        Ok(total)
    }
}

impl<L: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<L> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, LmError> {
        (**self).next_distribution(context)
    }
}

pub(crate) fn check_context(vocab: &Vocabulary, context: &[TokenId]) -> Result<(), LmError> {
    for (i, &t) in context.iter().enumerate() {
        if t as usize >= vocab.len() {
            return Err(LmError::UnknownToken(t));
        }
        if vocab.is_eos(t) {
            return Err(LmError::EosInContext(i));
        }
    }
    Ok(())
}

/// `log Σ exp(x)`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_places_eos_last() {
        let v = Vocabulary::bytes(b"ab").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.eos(), 2);
        assert!(v.bytes_of(v.eos()).is_empty());
        assert_eq!(v.decode(&[0, 1, 2]), b"ab");
    }

    #[test]
    fn empty_tokens_rejected() {
        assert_eq!(
            Vocabulary::merged(&["a", ""]),
            Err(VocabularyError::EmptyToken(1))
        );
        assert_eq!(Vocabulary::new(vec![]), Err(VocabularyError::Empty));
    }

    #[test]
    fn greedy_encoding_prefers_long_tokens() {
        let v = Vocabulary::merged(&["a", "ab", "b"]).unwrap();
        assert_eq!(v.encode(b"abab"), Some(vec![1, 1]));
        assert_eq!(v.encode(b"aab"), Some(vec![0, 1]));
        assert_eq!(v.encode(b"c"), None);
    }

    #[test]
    fn distribution_validation() {
        assert!(TokenDistribution::new(vec![(0.5f64).ln(), (0.5f64).ln()]).is_ok());
        assert!(matches!(
            TokenDistribution::new(vec![(0.5f64).ln(), (0.4f64).ln()]),
            Err(LmError::NotNormalized(_))
        ));
        let (d, total) =
            TokenDistribution::from_log_weights(vec![(0.49f64).ln(), (0.49f64).ln()]).unwrap();
        assert!((total.exp() - 0.98).abs() < 1e-12);
        assert!((d.prob(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lse_handles_infinities() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
