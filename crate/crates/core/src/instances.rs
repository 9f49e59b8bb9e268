//! Bundled synthetic instances and the brute-force enumerator that serves
//! as their oracle.
//!
//! Every instance carries its grammar, language model, potentials and a
//! scalar metric over outputs. Enumerable instances are small enough that
//! [`enumerate`] visits every sequence of at most `max_len` tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::grammar::{Grammar, GrammarError};
use crate::inference::{Method, MethodConfig, Model, QualityTarget, StepUnit};
use crate::lm::{
    log_sum_exp, HashedLm, LanguageModel, LmError, NgramError, NgramTrainer, TokenId, UniformLm, UnigramLm,
    Vocabulary,
};
use crate::potential::{
    CfgPotential, CheckedEvalPotential, FnPotential, Potential, PotentialClass, PotentialFault,
    PotentialProduct,
};
use crate::trie::TrieError;

pub const AB_BA_GRAMMAR: &str = include_str!("../data/grammars/ab_ba.bnf");
pub const A_STAR_GRAMMAR: &str = include_str!("../data/grammars/a_star.bnf");
pub const PARENS_GRAMMAR: &str = include_str!("../data/grammars/parens.bnf");
pub const EXPR_GRAMMAR: &str = include_str!("../data/grammars/expr.bnf");
pub const OPTIONAL_GRAMMAR: &str = include_str!("../data/grammars/optional.bnf");
pub const FIXED_SEVEN_GRAMMAR: &str = include_str!("../data/grammars/fixed_seven.bnf");
pub const ARITH_GRAMMAR: &str = include_str!("../data/grammars/arith.bnf");
pub const JSON_LITE_GRAMMAR: &str = include_str!("../data/grammars/json_lite.bnf");
pub const PARENS_CORPUS: &str = include_str!("../data/corpora/parens.txt");
/// Programs separated by `;`.
pub const ARITH_CORPUS: &str = include_str!("../data/corpora/arith.txt");

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 7] = [
    "ab-ba",
    "a-star",
    "nested-parens",
    "toy-arithmetic",
    "early-kill",
    "unconstrained",
    "perf",
];

/// Default node budget for [`Instance::enumerate`].
pub const DEFAULT_ENUMERATION_CAP: usize = 200_000;

/// Maximum nesting depth accepted by the nested-parens validator.
pub const PARENS_MAX_DEPTH: usize = 2;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("unknown instance `{0}`; expected one of {names}", names = NAMES.join(", "))]
    Unknown(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error("replacement model vocabulary differs from the instance vocabulary")]
    VocabularyMismatch,
}

#[derive(Debug, Error)]
pub enum EnumerationError {
    #[error("instance `{0}` is not enumerable")]
    NotEnumerable(String),
    #[error("enumeration visited more than {0} prefixes")]
    TooLarge(usize),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Potential(#[from] PotentialFault),
}

#[derive(Clone)]
pub struct Instance {
    pub name: &'static str,
    pub description: &'static str,
    pub grammar_source: &'static str,
    pub model: Model,
    /// Tokens per sequence, EOS included.
    pub max_len: usize,
    pub enumerable: bool,
    pub step_unit: StepUnit,
    /// Task score of a decoded output.
    pub metric: fn(&[u8]) -> f64,
}

impl std::fmt::Debug for Instance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Instance")
            .field("name", &self.name)
            .field("max_len", &self.max_len)
            .field("enumerable", &self.enumerable)
            .finish()
    }
}

impl Instance {
    pub fn vocabulary(&self) -> &Vocabulary {
        self.model.lm.vocabulary()
    }

    /// Method configuration with this instance's length cap and step unit.
    pub fn config(&self, method: Method, particles: usize) -> MethodConfig {
        MethodConfig::new(method, particles)
            .with_max_steps(self.max_len)
            .with_step_unit(self.step_unit)
    }

    /// Swaps the language model, keeping potentials. The vocabularies must
    /// be identical.
    pub fn with_lm(mut self, lm: Arc<dyn LanguageModel>) -> Result<Self, InstanceError> {
        if lm.vocabulary() != self.vocabulary() {
            return Err(InstanceError::VocabularyMismatch);
        }
        self.model = Model::new(lm, self.model.efficient.clone(), self.model.expensive.clone()).with_trie()?;
        Ok(self)
    }

    pub fn enumerate(&self, cap: usize) -> Result<Enumeration, EnumerationError> {
        if !self.enumerable {
            return Err(EnumerationError::NotEnumerable(self.name.to_string()));
        }
        let mut e = enumerate(&self.model, self.max_len, cap)?;
        e.instance = self.name.to_string();
        Ok(e)
    }
}

pub fn by_name(name: &str) -> Result<Instance, InstanceError> {
    match name {
        "ab-ba" => ab_ba(),
        "a-star" => a_star(),
        "nested-parens" => nested_parens(),
        "toy-arithmetic" => toy_arithmetic(),
        "early-kill" => early_kill(),
        "unconstrained" => unconstrained(),
        "perf" => perf(),
        other => Err(InstanceError::Unknown(other.to_string())),
    }
}

fn grammar_model(
    lm: Arc<dyn LanguageModel>,
    grammar: Grammar,
    expensive: Vec<Arc<dyn Potential>>,
) -> Result<Model, InstanceError> {
    let vocab = lm.vocabulary().clone();
    let eos = vocab.eos();
    let cfg: Arc<dyn Potential> = Arc::new(CfgPotential::new(grammar, vocab));
    Ok(Model::new(
        lm,
        PotentialProduct::new(vec![cfg], eos),
        PotentialProduct::new(expensive, eos),
    )
    .with_trie()?)
}

/// Uniform model over `{a, b, EOS}` constrained to `{ab, ba}`.
pub fn ab_ba() -> Result<Instance, InstanceError> {
    let vocab = Vocabulary::bytes(b"ab").expect("static vocabulary");
    let lm = Arc::new(UniformLm::new(vocab));
    Ok(Instance {
        name: "ab-ba",
        description: "uniform model over {a, b, EOS} constrained to {ab, ba}",
        grammar_source: AB_BA_GRAMMAR,
        model: grammar_model(lm, Grammar::parse(AB_BA_GRAMMAR)?, Vec::new())?,
        max_len: 3,
        enumerable: true,
        step_unit: StepUnit::Token,
        metric: |bytes| (bytes == b"ab") as u8 as f64,
    })
}

/// Uniform model over `{a, b, EOS}` constrained to `a*`.
pub fn a_star() -> Result<Instance, InstanceError> {
    let vocab = Vocabulary::bytes(b"ab").expect("static vocabulary");
    let lm = Arc::new(UniformLm::new(vocab));
    Ok(Instance {
        name: "a-star",
        description: "uniform model over {a, b, EOS} constrained to a*",
        grammar_source: A_STAR_GRAMMAR,
        model: grammar_model(lm, Grammar::parse(A_STAR_GRAMMAR)?, Vec::new())?,
        max_len: 20,
        enumerable: true,
        step_unit: StepUnit::Token,
        metric: |bytes| bytes.len() as f64,
    })
}

/// Maximum nesting depth of a parenthesis string, ignoring other bytes.
pub fn paren_depth(bytes: &[u8]) -> usize {
    let mut depth = 0usize;
    let mut max = 0;
    for &b in bytes {
        match b {
            b'(' => {
                depth += 1;
                max = max.max(depth);
            }
            b')' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    max
}

/// Bigram model trained on bundled balanced strings, constrained to
/// balanced parentheses, with an expensive validator capping nesting depth.
pub fn nested_parens() -> Result<Instance, InstanceError> {
    let lm = NgramTrainer::new(2, 0.5)
        .with_alphabet(b"()")
        .train(PARENS_CORPUS.as_bytes())?;
    let vocab = lm.vocabulary().clone();
    let validator: Arc<dyn Potential> = Arc::new(FnPotential::new(
        "max-depth",
        PotentialClass::Expensive,
        vocab,
        |bytes, _| {
            if paren_depth(bytes) <= PARENS_MAX_DEPTH {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        },
    ));
    Ok(Instance {
        name: "nested-parens",
        description: "bigram model on balanced strings; validator caps nesting depth at 2",
        grammar_source: PARENS_GRAMMAR,
        model: grammar_model(Arc::new(lm), Grammar::parse(PARENS_GRAMMAR)?, vec![validator])?,
        max_len: 12,
        enumerable: true,
        step_unit: StepUnit::Token,
        metric: |bytes| paren_depth(bytes) as f64,
    })
}

/// Trigram model on bundled assignment programs, constrained to the
/// assignment grammar and checked by evaluating each completed line.
pub fn toy_arithmetic() -> Result<Instance, InstanceError> {
    let grammar = Grammar::parse(ARITH_GRAMMAR)?;
    let lm = NgramTrainer::new(3, 0.1)
        .with_alphabet(&grammar.terminal_alphabet())
        .with_delimiter(b';')
        .train(ARITH_CORPUS.as_bytes())?;
    let checker: Arc<dyn Potential> = Arc::new(CheckedEvalPotential::toy(lm.vocabulary().clone()));
    Ok(Instance {
        name: "toy-arithmetic",
        description: "trigram model on assignment programs; each line must evaluate without fault",
        grammar_source: ARITH_GRAMMAR,
        model: grammar_model(Arc::new(lm), grammar, vec![checker])?,
        max_len: 64,
        enumerable: false,
        step_unit: StepUnit::SemanticUnit { boundary: b'\n' },
        metric: |bytes| bytes.iter().filter(|&&b| b == b'\n').count() as f64,
    })
}

/// Unigram probabilities over `a, b, c, d, EOS` for [`early_kill`].
pub const EARLY_KILL_PROBS: [f64; 5] = [0.38, 0.02, 0.30, 0.20, 0.10];

/// Fixed-length strings over `abcd` where an expensive potential rejects
/// any `c` or `d`. Each token survives with probability 4/9, so over 90%
/// of prefixes are dead after three tokens.
pub fn early_kill() -> Result<Instance, InstanceError> {
    let vocab = Vocabulary::bytes(b"abcd").expect("static vocabulary");
    let lm = UnigramLm::new(vocab.clone(), &EARLY_KILL_PROBS)?;
    let filter: Arc<dyn Potential> = Arc::new(FnPotential::new(
        "no-cd",
        PotentialClass::Expensive,
        vocab,
        |bytes, _| {
            if bytes.iter().any(|&b| b == b'c' || b == b'd') {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        },
    ));
    Ok(Instance {
        name: "early-kill",
        description: "length-7 strings over abcd; an expensive filter rejects c and d",
        grammar_source: FIXED_SEVEN_GRAMMAR,
        model: grammar_model(Arc::new(lm), Grammar::parse(FIXED_SEVEN_GRAMMAR)?, vec![filter])?,
        max_len: 8,
        enumerable: true,
        step_unit: StepUnit::Token,
        metric: |bytes| bytes.iter().filter(|&&b| b == b'a').count() as f64,
    })
}

/// Unigram probabilities over `a, b, EOS` for [`unconstrained`].
pub const UNCONSTRAINED_PROBS: [f64; 3] = [0.15, 0.05, 0.8];

/// A unigram model with no potentials at all.
pub fn unconstrained() -> Result<Instance, InstanceError> {
    let vocab = Vocabulary::bytes(b"ab").expect("static vocabulary");
    let lm = Arc::new(UnigramLm::new(vocab.clone(), &UNCONSTRAINED_PROBS)?);
    let eos = vocab.eos();
    Ok(Instance {
        name: "unconstrained",
        description: "unigram model over {a, b, EOS} with no potentials",
        grammar_source: "",
        model: Model::new(lm, PotentialProduct::empty(eos), PotentialProduct::empty(eos)).with_trie()?,
        max_len: 10,
        enumerable: true,
        step_unit: StepUnit::Token,
        metric: |bytes| bytes.len() as f64,
    })
}

/// Non-EOS tokens in the [`perf`] vocabulary.
pub const PERF_VOCAB_SIZE: usize = 1000;

/// Single bytes of the grammar alphabet plus seeded multi-byte strings
/// over it, `PERF_VOCAB_SIZE` tokens in all.
pub fn perf_vocabulary(grammar: &Grammar) -> Vocabulary {
    let alphabet = grammar.terminal_alphabet();
    let mut seen: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut tokens: Vec<Vec<u8>> = Vec::with_capacity(PERF_VOCAB_SIZE);
    for &b in &alphabet {
        seen.insert(vec![b]);
        tokens.push(vec![b]);
    }
    for word in ["true", "false", "null", "\": ", "\"a", "\"b", "{\"", "[1", ", ", "\"}"] {
        if seen.insert(word.as_bytes().to_vec()) {
            tokens.push(word.as_bytes().to_vec());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x70e7);
    while tokens.len() < PERF_VOCAB_SIZE {
        let len = rng.gen_range(2..=5);
        let t: Vec<u8> = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    }
    Vocabulary::new(tokens).expect("nonempty tokens")
}

/// A 1000-token vocabulary under a 50-rule JSON-like grammar with a hashed
/// synthetic model. For timing only.
pub fn perf() -> Result<Instance, InstanceError> {
    let grammar = Grammar::parse(JSON_LITE_GRAMMAR)?;
    let vocab = perf_vocabulary(&grammar);
    let lm = Arc::new(HashedLm::new(vocab, 2, 17));
    Ok(Instance {
        name: "perf",
        description: "1000-token vocabulary, 50-rule grammar, hashed synthetic model",
        grammar_source: JSON_LITE_GRAMMAR,
        model: grammar_model(lm, grammar, Vec::new())?,
        max_len: 64,
        enumerable: false,
        step_unit: StepUnit::Token,
        metric: |bytes| bytes.len() as f64,
    })
}

/// A complete sequence with positive `p_lm · Φ_eff`.
#[derive(Debug, Clone, Serialize)]
pub struct EnumeratedSequence {
    /// Tokens including the final EOS.
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub log_lm: f64,
    pub log_efficient: f64,
    pub log_expensive: f64,
    /// `log l_eff(x)` under the locally constrained proposal.
    pub log_local: f64,
}

impl EnumeratedSequence {
    pub fn log_target(&self, target: QualityTarget) -> f64 {
        match target {
            QualityTarget::Global => self.log_lm + self.log_efficient + self.log_expensive,
            QualityTarget::Efficient => self.log_lm + self.log_efficient,
            QualityTarget::LocalTimesExpensive => self.log_local + self.log_expensive,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PrefixNormalizer {
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// `log Σ p(x'|x) φ_eff(x'|x)`.
    pub log_normalizer: f64,
}

/// Exhaustive oracle over sequences of at most `max_len` tokens.
#[derive(Debug, Clone, Serialize)]
pub struct Enumeration {
    pub instance: String,
    pub max_len: usize,
    pub z_global: f64,
    pub log_z_global: f64,
    pub z_efficient: f64,
    pub z_local_expensive: f64,
    /// `p_lm · Φ_eff` mass of valid prefixes cut at `max_len`; bounds the
    /// mass missing from each `z` above.
    pub truncation_mass: f64,
    pub sequences: Vec<EnumeratedSequence>,
    pub prefixes: Vec<PrefixNormalizer>,
}

impl Enumeration {
    pub fn z(&self, target: QualityTarget) -> f64 {
        match target {
            QualityTarget::Global => self.z_global,
            QualityTarget::Efficient => self.z_efficient,
            QualityTarget::LocalTimesExpensive => self.z_local_expensive,
        }
    }

    pub fn log_z(&self, target: QualityTarget) -> f64 {
        self.z(target).ln()
    }

    /// Normalized target over complete token sequences.
    pub fn posterior(&self, target: QualityTarget) -> BTreeMap<Vec<TokenId>, f64> {
        let log_z = self.log_z(target);
        self.sequences
            .iter()
            .map(|s| (s.tokens.clone(), (s.log_target(target) - log_z).exp()))
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }

    /// Normalized global target keyed by decoded text.
    pub fn text_posterior(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (tokens, p) in self.posterior(QualityTarget::Global) {
            let text = self
                .sequences
                .iter()
                .find(|s| s.tokens == tokens)
                .map(|s| s.text.clone())
                .unwrap_or_default();
            *out.entry(text).or_insert(0.0) += p;
        }
        out
    }
}

struct Walker<'a> {
    model: &'a Model,
    max_len: usize,
    cap: usize,
    visited: usize,
    sequences: Vec<EnumeratedSequence>,
    prefixes: Vec<PrefixNormalizer>,
    truncation: Vec<f64>,
}

impl Walker<'_> {
    fn text(&self, tokens: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.model.lm.vocabulary().decode(tokens)).into_owned()
    }

    fn visit(
        &mut self,
        prefix: &mut Vec<TokenId>,
        state: &crate::potential::ProductState,
        log_lm: f64,
        log_local: f64,
    ) -> Result<(), EnumerationError> {
        self.visited += 1;
        if self.visited > self.cap {
            return Err(EnumerationError::TooLarge(self.cap));
        }
        if prefix.len() == self.max_len {
            self.truncation.push(log_lm + state.log_score());
            return Ok(());
        }
        let vocab = self.model.lm.vocabulary().clone();
        let dist = self.model.lm.next_distribution(prefix)?;
        let cond = state.next_conditional_scores(&vocab)?;
        let joint: Vec<f64> = dist.logprobs().iter().zip(&cond).map(|(p, c)| p + c).collect();
        let log_l = log_sum_exp(&joint);
        self.prefixes.push(PrefixNormalizer {
            tokens: prefix.clone(),
            text: self.text(prefix),
            log_normalizer: log_l,
        });
        for (t, &j) in joint.iter().enumerate() {
            if j == f64::NEG_INFINITY {
                continue;
            }
            let t = t as TokenId;
            let lm = log_lm + dist.logprob(t);
            let local = log_local + j - log_l;
            if vocab.is_eos(t) {
                let log_expensive = self.model.expensive.product_log_score(prefix, true)?;
                let mut tokens = prefix.clone();
                tokens.push(t);
                self.sequences.push(EnumeratedSequence {
                    text: self.text(&tokens),
                    tokens,
                    log_lm: lm,
                    log_efficient: state.log_score() + cond[t as usize],
                    log_expensive,
                    log_local: local,
                });
            } else {
                let (next, _) = state.extend(t)?;
                prefix.push(t);
                let r = self.visit(prefix, &next, lm, local);
                prefix.pop();
                r?;
            }
        }
        Ok(())
    }
}

/// Depth-first enumeration of every sequence of at most `max_len` tokens
/// (EOS included) with positive `p_lm · Φ_eff`, visiting at most `cap`
/// prefixes.
pub fn enumerate(model: &Model, max_len: usize, cap: usize) -> Result<Enumeration, EnumerationError> {
    let mut w = Walker {
        model,
        max_len,
        cap,
        visited: 0,
        sequences: Vec::new(),
        prefixes: Vec::new(),
        truncation: Vec::new(),
    };
    let start = model.efficient.start()?;
    if start.log_score() > f64::NEG_INFINITY {
        w.visit(&mut Vec::new(), &start, 0.0, 0.0)?;
    }
    let z = |target: QualityTarget| {
        let logs: Vec<f64> = w.sequences.iter().map(|s| s.log_target(target)).collect();
        log_sum_exp(&logs).exp()
    };
    let z_global = z(QualityTarget::Global);
    Ok(Enumeration {
        instance: String::new(),
        max_len,
        z_global,
        log_z_global: z_global.ln(),
        z_efficient: z(QualityTarget::Efficient),
        z_local_expensive: z(QualityTarget::LocalTimesExpensive),
        truncation_mass: log_sum_exp(&w.truncation).exp(),
        sequences: w.sequences,
        prefixes: w.prefixes,
    })
}
