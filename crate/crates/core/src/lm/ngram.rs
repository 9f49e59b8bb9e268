//! Byte-level n-gram reference model.
//!
//! Tokens are single bytes plus EOS. `order` is the number of preceding
//! tokens the model conditions on; shorter contexts are padded with a
//! start marker so the empty context yields the distribution of first
//! tokens. Conditionals use additive smoothing:
//!
//! ```text
//! p(x | ctx) = (count(ctx, x) + s) / (count(ctx) + s * |A ∪ {eos}|)
//! ```
//!
//! The corpus is split into documents on a delimiter byte (newline by
//! default). Each delimiter contributes an EOS transition; a trailing
//! segment with no delimiter contributes its byte transitions only. Empty
//! documents are skipped.
//!
//! # File format
//!
//! Models serialize to JSON:
//!
//! ```json
//! {
//!   "format": "constrained-smc/ngram",
//!   "version": 1,
//!   "order": 2,
//!   "smoothing": 0.5,
//!   "delimiter": 10,
//!   "alphabet": [97, 98],
//!   "contexts": [ { "context": [null, 0], "counts": [0, 3, 1] } ]
//! }
//! ```
//!
//! `alphabet[i]` is the byte of token `i`; EOS has id `alphabet.len()`.
//! `null` in a context is the start marker. `counts` is indexed by token id.
//! Contexts are sorted, so equal models serialize to identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_context, LanguageModel, LmError, TokenDistribution, TokenId, Vocabulary};

pub const NGRAM_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "constrained-smc/ngram";

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("order must be at least 1, got {0}")]
    Order(usize),
    #[error("smoothing must be finite and non-negative, got {0}")]
    Smoothing(f64),
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("unsupported model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Training configuration.
#[derive(Debug, Clone)]
pub struct NgramTrainer {
    pub order: usize,
    pub smoothing: f64,
    pub delimiter: u8,
    /// Extra bytes to include in the vocabulary even if unseen.
    pub alphabet: Vec<u8>,
}

impl NgramTrainer {
    pub fn new(order: usize, smoothing: f64) -> Self {
        Self {
            order,
            smoothing,
            delimiter: b'\n',
            alphabet: Vec::new(),
        }
    }

    pub fn with_alphabet(mut self, alphabet: &[u8]) -> Self {
        self.alphabet = alphabet.to_vec();
        self
    }

    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }

    pub fn train(&self, corpus: &[u8]) -> Result<NgramModel, NgramError> {
        if self.order == 0 {
            return Err(NgramError::Order(0));
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return Err(NgramError::Smoothing(self.smoothing));
        }
        let docs = split_documents(corpus, self.delimiter);
        if docs.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        let alphabet: Vec<u8> = docs
            .iter()
            .flat_map(|(d, _)| d.iter().copied())
            .chain(self.alphabet.iter().copied())
            .filter(|&b| b != self.delimiter)
            .collect::<BTreeSet<u8>>()
            .into_iter()
            .collect();
        if alphabet.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        let vocab = Vocabulary::bytes(&alphabet).expect("nonempty alphabet");
        let mut index = [0 as TokenId; 256];
        for (i, &b) in alphabet.iter().enumerate() {
            index[b as usize] = i as TokenId;
        }
        let width = vocab.len();
        let mut counts: BTreeMap<Vec<Option<TokenId>>, Vec<u64>> = BTreeMap::new();
        for (doc, terminated) in &docs {
            let mut tokens: Vec<TokenId> = doc.iter().map(|&b| index[b as usize]).collect();
            if *terminated {
                tokens.push(vocab.eos());
            }
            for t in 0..tokens.len() {
                let key = context_key(self.order, &tokens[..t]);
                counts.entry(key).or_insert_with(|| vec![0; width])[tokens[t] as usize] += 1;
            }
        }
        Ok(NgramModel {
            order: self.order,
            smoothing: self.smoothing,
            delimiter: self.delimiter,
            vocab,
            alphabet,
            counts,
            horizon: None,
        })
    }
}

fn split_documents(corpus: &[u8], delimiter: u8) -> Vec<(&[u8], bool)> {
    let mut docs = Vec::new();
    let mut rest = corpus;
    while !rest.is_empty() {
        match rest.iter().position(|&b| b == delimiter) {
            Some(i) => {
                if i > 0 {
                    docs.push((&rest[..i], true));
                }
                rest = &rest[i + 1..];
            }
            None => {
                docs.push((rest, false));
                rest = &[];
            }
        }
    }
    docs
}

fn context_key(order: usize, context: &[TokenId]) -> Vec<Option<TokenId>> {
    let start = context.len().saturating_sub(order);
    let tail = &context[start..];
    let mut key = vec![None; order - tail.len()];
    key.extend(tail.iter().map(|&t| Some(t)));
    key
}

/// A trained n-gram model. See the module docs for the conditional formula.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    smoothing: f64,
    delimiter: u8,
    vocab: Vocabulary,
    alphabet: Vec<u8>,
    counts: BTreeMap<Vec<Option<TokenId>>, Vec<u64>>,
    horizon: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    smoothing: f64,
    delimiter: u8,
    alphabet: Vec<u8>,
    contexts: Vec<ContextRow>,
}

#[derive(Serialize, Deserialize)]
struct ContextRow {
    context: Vec<Option<TokenId>>,
    counts: Vec<u64>,
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Refuse contexts longer than `max` tokens.
    pub fn with_horizon(mut self, max: usize) -> Self {
        self.horizon = Some(max);
        self
    }

    /// Raw count row for a context, if observed.
    pub fn counts(&self, context: &[TokenId]) -> Option<&[u64]> {
        self.counts
            .get(&context_key(self.order, context))
            .map(|v| v.as_slice())
    }

    /// Encodes a document's bytes (without delimiter) as tokens.
    pub fn encode(&self, bytes: &[u8]) -> Option<Vec<TokenId>> {
        bytes
            .iter()
            .map(|b| self.alphabet.binary_search(b).ok().map(|i| i as TokenId))
            .collect()
    }

    /// Per-token perplexity over the documents of `corpus`, each scored as a
    /// complete sequence when delimiter-terminated. Bytes outside the
    /// vocabulary yield infinite perplexity.
    pub fn perplexity(&self, corpus: &[u8]) -> Result<f64, LmError> {
        let mut total = 0.0;
        let mut n = 0usize;
        for (doc, terminated) in split_documents(corpus, self.delimiter) {
            let Some(mut tokens) = self.encode(doc) else {
                return Ok(f64::INFINITY);
            };
            if terminated {
                tokens.push(self.vocab.eos());
            }
            total += self.sequence_logprob(&tokens)?;
            n += tokens.len();
        }
        if n == 0 {
            return Ok(f64::NAN);
        }
        Ok((-total / n as f64).exp())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT_TAG.to_string(),
            version: NGRAM_FORMAT_VERSION,
            order: self.order,
            smoothing: self.smoothing,
            delimiter: self.delimiter,
            alphabet: self.alphabet.clone(),
            contexts: self
                .counts
                .iter()
                .map(|(k, v)| ContextRow {
                    context: k.clone(),
                    counts: v.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, NgramError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG || file.version != NGRAM_FORMAT_VERSION {
            return Err(NgramError::Format(format!(
                "{} v{}",
                file.format, file.version
            )));
        }
        if file.order == 0 {
            return Err(NgramError::Order(0));
        }
        let vocab = Vocabulary::bytes(&file.alphabet)
            .map_err(|e| NgramError::Format(e.to_string()))?;
        let mut counts = BTreeMap::new();
        for row in file.contexts {
            if row.context.len() != file.order || row.counts.len() != vocab.len() {
                return Err(NgramError::Format(format!(
                    "context row {:?} has the wrong shape",
                    row.context
                )));
            }
            counts.insert(row.context, row.counts);
        }
        Ok(Self {
            order: file.order,
            smoothing: file.smoothing,
            delimiter: file.delimiter,
            vocab,
            alphabet: file.alphabet,
            counts,
            horizon: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NgramError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NgramError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl LanguageModel for NgramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, LmError> {
        if let Some(max) = self.horizon {
            if context.len() > max {
                return Err(LmError::Horizon {
                    len: context.len(),
                    max,
                });
            }
        }
        check_context(&self.vocab, context)?;
        let width = self.vocab.len();
        let row = self.counts(context);
        let total: u64 = row.map(|r| r.iter().sum()).unwrap_or(0);
        if total == 0 && self.smoothing == 0.0 {
            let start = context.len().saturating_sub(self.order);
            return Err(LmError::Coverage(context[start..].to_vec()));
        }
        let denom = total as f64 + self.smoothing * width as f64;
        let logprobs = (0..width)
            .map(|i| {
                let c = row.map(|r| r[i]).unwrap_or(0) as f64;
                ((c + self.smoothing) / denom).ln()
            })
            .collect();
        Ok(TokenDistribution { logprobs })
    }
}
