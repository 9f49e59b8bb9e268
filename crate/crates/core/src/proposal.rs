//! Properly weighted next-token proposals.
//!
//! Both proposals target the unnormalized local distribution
//! `σ̃(x') = p(x' | ctx) · Φ_eff(x' | ctx)` and return a token together with
//! a log weight whose expectation is `log`-consistent with `L = Σ σ̃`:
//! the exact proposal returns `L` itself, the trie walk returns the
//! Horvitz-Thompson set weight `W̃_S`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::lm::{log_sum_exp, LanguageModel, LmError, TokenDistribution, TokenId};
use crate::potential::{PotentialFault, ProductState};
use crate::trie::{TokenTrie, ROOT};

#[derive(Debug, Error)]
pub enum ProposalError {
    /// No continuation has positive local weight.
    #[error("dead end: no token has positive local weight")]
    DeadEnd,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Potential(#[from] PotentialFault),
    #[error("the character proposal needs a grammar among the efficient potentials")]
    NoGrammar,
}

/// Context plus the model and efficient potentials scoring it.
pub struct LocalTarget<'a> {
    pub context: &'a [TokenId],
    pub lm: &'a dyn LanguageModel,
    pub efficient: &'a ProductState,
}

impl LocalTarget<'_> {
    pub fn distribution(&self) -> Result<TokenDistribution, ProposalError> {
        Ok(self.lm.next_distribution(self.context)?)
    }

    /// `log σ̃(x')` for every id.
    pub fn log_weights(&self, dist: &TokenDistribution) -> Result<Vec<f64>, ProposalError> {
        let vocab = self.lm.vocabulary();
        let phi = if self.efficient.is_empty() {
            vec![0.0; vocab.len()]
        } else {
            self.efficient.next_conditional_scores(vocab)?
        };
        Ok(dist
            .logprobs()
            .iter()
            .zip(phi)
            .map(|(&lp, f)| if f == f64::NEG_INFINITY { f } else { lp + f })
            .collect())
    }
}

/// A proposed token and its weight.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedToken {
    pub token: TokenId,
    /// `log L` for the exact proposal, `log W̃_S` for the trie walk.
    pub log_set_weight: f64,
    /// `log p(token | ctx)`.
    pub log_lm: f64,
    /// Log-probability that the proposal emits `token`, when tractable.
    pub log_proposal: Option<f64>,
    pub trace: Option<ProposalTrace>,
}

/// Samples `x' ∝ σ̃(x')`; the weight is `log L`.
pub fn exact_local_step<R: Rng + ?Sized>(
    target: &LocalTarget<'_>,
    rng: &mut R,
) -> Result<WeightedToken, ProposalError> {
    let dist = target.distribution()?;
    let logw = target.log_weights(&dist)?;
    // Without efficient potentials `σ̃ = p`, so `L = 1` exactly; summing
    // would only add rounding noise to otherwise equal weights.
    let log_l = if target.efficient.is_empty() {
        0.0
    } else {
        log_sum_exp(&logw)
    };
    if log_l == f64::NEG_INFINITY {
        return Err(ProposalError::DeadEnd);
    }
    let token = sample_log_weights(&logw, log_l, rng);
    Ok(WeightedToken {
        token,
        log_set_weight: log_l,
        log_lm: dist.logprob(token),
        log_proposal: Some(logw[token as usize] - log_l),
        trace: None,
    })
}

/// Samples from `dist` directly; weight `0`.
pub fn lm_step<R: Rng + ?Sized>(
    dist: &TokenDistribution,
    rng: &mut R,
) -> Result<WeightedToken, ProposalError> {
    let token = sample_log_weights(dist.logprobs(), 0.0, rng);
    Ok(WeightedToken {
        token,
        log_set_weight: 0.0,
        log_lm: dist.logprob(token),
        log_proposal: Some(dist.logprob(token)),
        trace: None,
    })
}

fn sample_log_weights<R: Rng + ?Sized>(logw: &[f64], log_total: f64, rng: &mut R) -> TokenId {
    let w: Vec<f64> = logw.iter().map(|l| (l - log_total).exp()).collect();
    WeightedIndex::new(&w).expect("positive total weight").sample(rng) as TokenId
}

/// Record of one trie walk, for debugging and for checking inclusion
/// probabilities.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ProposalTrace {
    pub steps: Vec<TraceStep>,
    /// Tokens in the sampled set with their log local weights.
    pub set: Vec<(TokenId, f64)>,
    pub chosen: Option<TokenId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    /// Unnormalized `q̄` over the children of the current node.
    pub q_bar: Vec<(u8, f64)>,
    pub byte: u8,
    /// Inclusion probability of the node reached.
    pub inclusion: f64,
}

/// Set-based proposal by a random walk down the token trie.
///
/// At node `ρ` a child byte `a` is drawn with probability proportional to
/// `mass(ρa) · 1{grammar allows a}`, the inclusion probability is updated as
/// `ι(ρa) = ι(ρ) q̄(a) / Q`, and every token ending on the path joins the set
/// with weight `σ̃(x) / ι(x)`. EOS joins at the root with `ι = 1`. The walk
/// stops when no child has positive `q̄`.
pub fn character_proposal<R: Rng + ?Sized>(
    target: &LocalTarget<'_>,
    trie: &TokenTrie,
    rng: &mut R,
    with_trace: bool,
) -> Result<WeightedToken, ProposalError> {
    let (rec, recognizer) = target.efficient.recognizer().ok_or(ProposalError::NoGrammar)?;
    let grammar_only = target.efficient.len() == 1;
    let dist = target.distribution()?;
    let mass = trie.compute_mass(&dist);
    let mut trace = ProposalTrace::default();

    // Conditional score of the non-grammar efficient potentials; the grammar
    // factor is 1 for anything reached by an allowed walk.
    let phi = |token: TokenId| -> Result<f64, ProposalError> {
        if grammar_only {
            Ok(0.0)
        } else {
            Ok(target.efficient.extend(token)?.1)
        }
    };

    let mut set: Vec<(TokenId, f64)> = Vec::new();
    let mut log_iota = 0.0f64;
    if recognizer.allows_eos() && mass.eos_mass() > 0.0 {
        let eos = trie.eos();
        let f = phi(eos)?;
        if f > f64::NEG_INFINITY {
            set.push((eos, mass.eos_mass().ln() + f));
        }
    }

    let mut node = ROOT;
    let mut state = recognizer.clone();
    loop {
        let children = trie.children(node);
        let q_bar: Vec<f64> = children
            .iter()
            .map(|&(b, c)| if state.allows(b) { mass.mass(c) } else { 0.0 })
            .collect();
        let q: f64 = q_bar.iter().sum();
        if q <= 0.0 {
            break;
        }
        let pick = WeightedIndex::new(&q_bar).expect("positive mass").sample(rng);
        let (byte, child) = children[pick];
        log_iota += (q_bar[pick] / q).ln();
        state = rec.advance(&state, byte);
        node = child;
        if with_trace {
            trace.steps.push(TraceStep {
                q_bar: children.iter().zip(&q_bar).map(|(&(b, _), &w)| (b, w)).collect(),
                byte,
                inclusion: log_iota.exp(),
            });
        }
        if let Some(tok) = trie.token_at(node) {
            let p = mass.eot_mass(node);
            if p > 0.0 {
                let f = phi(tok)?;
                if f > f64::NEG_INFINITY {
                    set.push((tok, p.ln() + f - log_iota));
                }
            }
        }
    }

    let logw: Vec<f64> = set.iter().map(|&(_, w)| w).collect();
    let log_total = log_sum_exp(&logw);
    if with_trace {
        trace.set = set.clone();
    }
    if log_total == f64::NEG_INFINITY {
        return Err(ProposalError::DeadEnd);
    }
    let token = set[sample_log_weights(&logw, log_total, rng) as usize].0;
    trace.chosen = Some(token);
    Ok(WeightedToken {
        token,
        log_set_weight: log_total,
        log_lm: dist.logprob(token),
        log_proposal: None,
        trace: with_trace.then_some(trace),
    })
}
