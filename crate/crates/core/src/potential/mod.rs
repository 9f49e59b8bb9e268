//! Potential functions `φ(x) ≥ 0`, scored in log space.
//!
//! A potential scores partial and complete token sequences. Hard
//! constraints return `-inf`; once a prefix scores `-inf` every extension
//! must too. Potentials are either *efficient* (evaluated on every candidate
//! next token inside the proposal) or *expensive* (evaluated once per
//! particle increment and folded into the weight).
//!
//! For incremental evaluation each potential hands out a persistent
//! [`PotentialState`]; particles hold one state per potential and extend it
//! token by token.

mod cfg;
mod checked_eval;
mod func;

pub use cfg::CfgPotential;
pub use checked_eval::{CheckedEvalPotential, EvalFault, Evaluator, ToyEvaluator};
pub use func::FnPotential;

use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::grammar::{Recognizer, RecognizerState};
use crate::lm::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PotentialClass {
    Efficient,
    Expensive,
}

/// How often a potential's value can change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stride {
    EveryToken,
    /// Only at tokens containing the boundary byte (or at EOS).
    SemanticUnit { boundary: u8 },
}

impl Stride {
    pub fn is_boundary(&self, token_bytes: &[u8]) -> bool {
        match self {
            Stride::EveryToken => true,
            Stride::SemanticUnit { boundary } => token_bytes.contains(boundary),
        }
    }
}

/// A potential failed to produce a score (as opposed to scoring zero).
#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[error("potential `{potential}` faulted: {message}")]
pub struct PotentialFault {
    pub potential: String,
    pub message: String,
}

pub trait Potential: Send + Sync {
    fn name(&self) -> &str;

    fn class(&self) -> PotentialClass;

    fn stride(&self) -> Stride {
        Stride::EveryToken
    }

    /// Log of the declared upper bound on the potential.
    fn log_upper_bound(&self) -> f64 {
        0.0
    }

    /// `log φ(tokens)`; `complete` marks a sequence that ended with EOS
    /// (the EOS id itself is not included in `tokens`).
    fn log_score(&self, tokens: &[TokenId], complete: bool) -> Result<f64, PotentialFault>;

    /// Incremental state for the empty sequence.
    fn start(self: Arc<Self>) -> Arc<dyn PotentialState>;
}

/// Persistent incremental evaluation state for one potential.
pub trait PotentialState: Send + Sync {
    /// State for the sequence extended by a non-EOS token.
    fn extend(&self, token: TokenId) -> Arc<dyn PotentialState>;

    /// Score of the current sequence, as partial or as complete.
    fn log_score(&self, complete: bool) -> Result<f64, PotentialFault>;

    /// `log φ(x x')` for every id in `vocab` (EOS scored as completion).
    fn next_log_scores(&self, vocab: &Vocabulary) -> Result<Vec<f64>, PotentialFault> {
        (0..vocab.len() as TokenId)
            .map(|id| {
                if vocab.is_eos(id) {
                    self.log_score(true)
                } else {
                    self.extend(id).log_score(false)
                }
            })
            .collect()
    }

    /// Byte-level recognizer and its state, for grammar potentials.
    fn recognizer(&self) -> Option<(&Recognizer, &RecognizerState)> {
        None
    }
}

/// State that rescans the whole sequence on every query.
pub struct RescoreState<P: Potential + ?Sized> {
    potential: Arc<P>,
    tokens: Arc<Vec<TokenId>>,
}

impl<P: Potential + ?Sized + 'static> RescoreState<P> {
    pub fn start(potential: Arc<P>) -> Arc<dyn PotentialState> {
        Arc::new(Self {
            potential,
            tokens: Arc::new(Vec::new()),
        })
    }
}

impl<P: Potential + ?Sized + 'static> PotentialState for RescoreState<P> {
    fn extend(&self, token: TokenId) -> Arc<dyn PotentialState> {
        let mut tokens = (*self.tokens).clone();
        tokens.push(token);
        Arc::new(Self {
            potential: self.potential.clone(),
            tokens: Arc::new(tokens),
        })
    }

    fn log_score(&self, complete: bool) -> Result<f64, PotentialFault> {
        self.potential.log_score(&self.tokens, complete)
    }
}

/// What to do when a member potential faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum FaultPolicy {
    /// Score the sequence zero and record the fault.
    #[default]
    Zero,
    /// Propagate the fault as an error.
    Abort,
}

#[derive(Debug, Default)]
struct FaultLog {
    records: Mutex<Vec<PotentialFault>>,
}

/// `Φ(x) = Π φ(x)` over member potentials; the empty product is one.
#[derive(Clone)]
pub struct PotentialProduct {
    members: Vec<Arc<dyn Potential>>,
    eos: TokenId,
    policy: FaultPolicy,
    faults: Arc<FaultLog>,
}

impl std::fmt::Debug for PotentialProduct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PotentialProduct")
            .field("members", &self.names())
            .field("policy", &self.policy)
            .finish()
    }
}

impl PotentialProduct {
    pub fn new(members: Vec<Arc<dyn Potential>>, eos: TokenId) -> Self {
        Self {
            members,
            eos,
            policy: FaultPolicy::Zero,
            faults: Arc::new(FaultLog::default()),
        }
    }

    pub fn empty(eos: TokenId) -> Self {
        Self::new(Vec::new(), eos)
    }

    pub fn with_fault_policy(mut self, policy: FaultPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn members(&self) -> &[Arc<dyn Potential>] {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.name().to_string()).collect()
    }

    /// Faults recorded so far under [`FaultPolicy::Zero`].
    pub fn faults(&self) -> Vec<PotentialFault> {
        self.faults.records.lock().expect("fault log").clone()
    }

    fn absorb(&self, r: Result<f64, PotentialFault>) -> Result<f64, PotentialFault> {
        match (r, self.policy) {
            (Ok(v), _) => Ok(v),
            (Err(f), FaultPolicy::Abort) => Err(f),
            (Err(f), FaultPolicy::Zero) => {
                log::debug!("{f}");
                self.faults.records.lock().expect("fault log").push(f);
                Ok(f64::NEG_INFINITY)
            }
        }
    }

    /// Sum of member log-scores; `-inf` short-circuits.
    pub fn product_log_score(&self, tokens: &[TokenId], complete: bool) -> Result<f64, PotentialFault> {
        let mut total = 0.0;
        for m in &self.members {
            total += self.absorb(m.log_score(tokens, complete))?;
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        Ok(total)
    }

    /// `log Φ(context · next) - log Φ(context)`, with the convention that a
    /// zero-scoring context gives `-inf`.
    pub fn conditional_log_score(&self, next: TokenId, context: &[TokenId]) -> Result<f64, PotentialFault> {
        let before = self.product_log_score(context, false)?;
        if before == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let after = if next == self.eos {
            self.product_log_score(context, true)?
        } else {
            let mut ext = context.to_vec();
            ext.push(next);
            self.product_log_score(&ext, false)?
        };
        Ok(conditional(before, after))
    }

    pub fn start(&self) -> Result<ProductState, PotentialFault> {
        let states: Vec<_> = self.members.iter().map(|m| m.clone().start()).collect();
        let mut score = 0.0;
        for s in &states {
            score += self.absorb(s.log_score(false))?;
        }
        Ok(ProductState {
            product: self.clone(),
            states,
            log_score: score,
        })
    }
}

/// Zero-safe log ratio.
pub fn conditional(before: f64, after: f64) -> f64 {
    if before == f64::NEG_INFINITY || after == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        after - before
    }
}

/// Incremental state of a [`PotentialProduct`], with the cached partial
/// score of the current sequence.
#[derive(Clone)]
pub struct ProductState {
    product: PotentialProduct,
    states: Vec<Arc<dyn PotentialState>>,
    log_score: f64,
}

impl std::fmt::Debug for ProductState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProductState")
            .field("log_score", &self.log_score)
            .finish()
    }
}

impl ProductState {
    /// Partial-sequence score of the current prefix.
    pub fn log_score(&self) -> f64 {
        self.log_score
    }

    /// Extends by `token`; returns the new state and `log Φ(x x') - log Φ(x)`.
    pub fn extend(&self, token: TokenId) -> Result<(ProductState, f64), PotentialFault> {
        if token == self.product.eos {
            let complete = self.complete_score()?;
            let next = ProductState {
                product: self.product.clone(),
                states: self.states.clone(),
                log_score: complete,
            };
            return Ok((next, conditional(self.log_score, complete)));
        }
        let states: Vec<_> = self.states.iter().map(|s| s.extend(token)).collect();
        let mut score = 0.0;
        if self.log_score == f64::NEG_INFINITY {
            score = f64::NEG_INFINITY;
        } else {
            for s in &states {
                score += self.product.absorb(s.log_score(false))?;
                if score == f64::NEG_INFINITY {
                    break;
                }
            }
        }
        let delta = conditional(self.log_score, score);
        Ok((
            ProductState {
                product: self.product.clone(),
                states,
                log_score: score,
            },
            delta,
        ))
    }

    /// Score of the current sequence treated as complete.
    pub fn complete_score(&self) -> Result<f64, PotentialFault> {
        if self.log_score == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let mut score = 0.0;
        for s in &self.states {
            score += self.product.absorb(s.log_score(true))?;
            if score == f64::NEG_INFINITY {
                break;
            }
        }
        Ok(score)
    }

    /// Conditional scores `log Φ(x x') - log Φ(x)` for every id.
    pub fn next_conditional_scores(&self, vocab: &Vocabulary) -> Result<Vec<f64>, PotentialFault> {
        let mut total = vec![0.0; vocab.len()];
        if self.log_score == f64::NEG_INFINITY {
            total.fill(f64::NEG_INFINITY);
            return Ok(total);
        }
        for s in &self.states {
            let before = self.product.absorb(s.log_score(false))?;
            let next = match s.next_log_scores(vocab) {
                Ok(v) => v,
                Err(f) => {
                    self.product.absorb(Err(f))?;
                    vec![f64::NEG_INFINITY; vocab.len()]
                }
            };
            for (t, n) in total.iter_mut().zip(next) {
                *t += conditional(before, n);
            }
        }
        Ok(total)
    }

    /// The first member's recognizer and state, if it has one.
    pub fn recognizer(&self) -> Option<(&Recognizer, &RecognizerState)> {
        self.states.iter().find_map(|s| s.recognizer())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}
