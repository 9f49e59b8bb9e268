use std::sync::Arc;
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::{ConfigError, Method, MethodConfig, PosteriorApproximation, PosteriorEntry, ProposalKind, StepUnit};
use crate::lm::{log_sum_exp, LanguageModel, LmError, TokenId};
use crate::potential::{PotentialFault, PotentialProduct, ProductState};
use crate::proposal::{character_proposal, exact_local_step, lm_step, LocalTarget, ProposalError};
use crate::rng::{stream_rng, RESAMPLE_STREAM};
use crate::trie::{TokenTrie, TrieError};

/// A language model with its efficient and expensive potentials.
#[derive(Clone)]
pub struct Model {
    pub lm: Arc<dyn LanguageModel>,
    pub efficient: PotentialProduct,
    pub expensive: PotentialProduct,
    trie: Option<Arc<TokenTrie>>,
}

impl Model {
    pub fn new(lm: Arc<dyn LanguageModel>, efficient: PotentialProduct, expensive: PotentialProduct) -> Self {
        Self {
            lm,
            efficient,
            expensive,
            trie: None,
        }
    }

    /// Builds the token trie needed by the character proposal.
    pub fn with_trie(mut self) -> Result<Self, TrieError> {
        self.trie = Some(Arc::new(TokenTrie::build(self.lm.vocabulary())?));
        Ok(self)
    }

    pub fn trie(&self) -> Option<&TokenTrie> {
        self.trie.as_deref()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Potential(#[from] PotentialFault),
    #[error("the character proposal needs a token trie and a grammar potential")]
    NoTrie,
    #[error("every particle has zero weight")]
    AllDead,
}

impl From<ProposalError> for RunError {
    fn from(e: ProposalError) -> Self {
        match e {
            ProposalError::Lm(e) => RunError::Lm(e),
            ProposalError::Potential(f) => RunError::Potential(f),
            ProposalError::NoGrammar | ProposalError::DeadEnd => RunError::NoTrie,
        }
    }
}

/// A partial or complete sequence with its weight and incremental states.
#[derive(Debug, Clone)]
pub struct Particle {
    pub tokens: Vec<TokenId>,
    pub log_weight: f64,
    pub complete: bool,
    pub lineage: u64,
    /// `Σ log p(x_t | x_<t)`.
    pub log_lm: f64,
    /// Log-density of the sequence under the proposal, when tractable.
    pub log_proposal: Option<f64>,
    /// `Σ log L_t` (or `log W̃_S` under the character proposal).
    pub log_local: f64,
    pub truncated: bool,
    pub dead_end: bool,
    efficient: ProductState,
    expensive: ProductState,
    pending_local: f64,
    pending_expensive: f64,
}

impl Particle {
    pub fn is_dead(&self) -> bool {
        self.log_weight == f64::NEG_INFINITY
    }

    pub fn is_active(&self) -> bool {
        !self.complete && !self.is_dead()
    }

    /// `log Φ_eff` of the sequence (as complete once EOS is appended).
    pub fn log_efficient(&self) -> f64 {
        self.efficient.log_score()
    }

    /// `log Φ_exp` of the sequence.
    pub fn log_expensive(&self) -> f64 {
        self.expensive.log_score()
    }
}

/// Serializable view of a particle.
#[derive(Debug, Clone, Serialize)]
pub struct ParticleRecord {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub log_weight: f64,
    pub complete: bool,
    pub lineage: u64,
    pub log_lm: f64,
    pub log_proposal: Option<f64>,
    pub log_local: f64,
    pub log_efficient: f64,
    pub log_expensive: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub ess: f64,
    pub resampled: bool,
    pub log_mean_weight: f64,
    pub active: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub method: Method,
    pub seed: u64,
    pub particles: Vec<ParticleRecord>,
    pub steps: Vec<StepDiagnostics>,
    /// `log` of the mean final weight. Weights are reset to `W/N` at each
    /// resampling, so this equals the product over resampling epochs of
    /// mean incremental weights.
    pub log_evidence: f64,
    pub resamples: usize,
    pub truncated: usize,
    pub dead_ends: usize,
    pub faults: usize,
    pub all_dead: bool,
}

impl RunOutput {
    pub fn posterior(&self) -> PosteriorApproximation {
        PosteriorApproximation::from_entries(
            self.particles
                .iter()
                .filter(|p| p.complete)
                .map(|p| PosteriorEntry {
                    tokens: p.tokens.clone(),
                    text: p.text.clone(),
                    weight: p.log_weight,
                })
                .collect(),
        )
    }

    /// Log weights of every particle.
    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }
}

/// ESS `(Σw)² / Σw²` of nonnegative weights; zero if all are zero.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// ESS computed from log weights.
pub fn ess_log(log_weights: &[f64]) -> f64 {
    let a = log_sum_exp(log_weights);
    if a == f64::NEG_INFINITY {
        return 0.0;
    }
    let doubled: Vec<f64> = log_weights.iter().map(|w| 2.0 * w).collect();
    (2.0 * a - log_sum_exp(&doubled)).exp()
}

/// N particles plus the bookkeeping for one run.
pub struct ParticleSystem {
    pub particles: Vec<Particle>,
    config: MethodConfig,
    model: Model,
    seed: u64,
    step: usize,
    next_lineage: u64,
    resamples: usize,
}

impl ParticleSystem {
    pub fn new(config: MethodConfig, model: Model, seed: u64) -> Result<Self, RunError> {
        config.validate()?;
        if config.proposal == ProposalKind::CharacterTrie && config.method.uses_local_proposal() {
            if model.trie.is_none() {
                return Err(RunError::NoTrie);
            }
            if model.efficient.start()?.recognizer().is_none() {
                return Err(RunError::NoTrie);
            }
        }
        let efficient = model.efficient.start()?;
        let expensive = model.expensive.start()?;
        let particles = (0..config.particles as u64)
            .map(|i| Particle {
                tokens: Vec::new(),
                log_weight: 0.0,
                complete: false,
                lineage: i,
                log_lm: 0.0,
                log_proposal: Some(0.0),
                log_local: 0.0,
                truncated: false,
                dead_end: false,
                efficient: efficient.clone(),
                expensive: expensive.clone(),
                pending_local: 0.0,
                pending_expensive: 0.0,
            })
            .collect();
        Ok(Self {
            particles,
            next_lineage: config.particles as u64,
            config,
            model,
            seed,
            step: 0,
            resamples: 0,
        })
    }

    pub fn config(&self) -> &MethodConfig {
        &self.config
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    pub fn log_total_weight(&self) -> f64 {
        log_sum_exp(&self.log_weights())
    }

    pub fn has_active(&self) -> bool {
        self.particles.iter().any(Particle::is_active)
    }

    /// Extends every active particle by one token or one semantic unit,
    /// in parallel on the current rayon pool.
    pub fn extend_step(&mut self) -> Result<(), RunError> {
        let ctx = StepContext {
            config: &self.config,
            model: &self.model,
            seed: self.seed,
        };
        self.particles
            .par_iter_mut()
            .filter(|p| p.is_active())
            .try_for_each(|p| ctx.extend(p))
    }

    /// Folds the pending increments into the weights according to the
    /// method.
    pub fn reweight_step(&mut self) {
        let method = self.config.method;
        for p in &mut self.particles {
            let mut inc = 0.0;
            if method.weights_local_normalizer() {
                inc += p.pending_local;
            }
            if method.weights_expensive() {
                inc += p.pending_expensive;
            }
            if p.dead_end || p.truncated {
                inc = f64::NEG_INFINITY;
            }
            if inc != 0.0 {
                p.log_weight += inc;
            }
            p.pending_local = 0.0;
            p.pending_expensive = 0.0;
        }
        self.step += 1;
    }

    /// Resamples iff ESS is strictly below `ess_threshold · N`.
    pub fn maybe_resample(&mut self) -> Result<bool, RunError> {
        let n = self.particles.len() as f64;
        let e = ess_log(&self.log_weights());
        if e < self.config.ess_threshold * n {
            self.resample_multinomial()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Draws N ancestors with probability proportional to weight; each
    /// copy gets weight `W/N` and a fresh lineage id. With
    /// `resample_complete = false` only incomplete slots are resampled,
    /// among incomplete particles.
    pub fn resample_multinomial(&mut self) -> Result<(), RunError> {
        let slots: Vec<usize> = if self.config.resample_complete {
            (0..self.particles.len()).collect()
        } else {
            (0..self.particles.len())
                .filter(|&i| !self.particles[i].complete)
                .collect()
        };
        if slots.is_empty() {
            return Ok(());
        }
        let logw: Vec<f64> = slots.iter().map(|&i| self.particles[i].log_weight).collect();
        let log_total = log_sum_exp(&logw);
        if log_total == f64::NEG_INFINITY {
            return Err(RunError::AllDead);
        }
        let w: Vec<f64> = logw.iter().map(|l| (l - log_total).exp()).collect();
        let index = WeightedIndex::new(&w).expect("positive total weight");
        let mut rng = stream_rng(self.seed, RESAMPLE_STREAM, self.step as u64);
        let ancestors: Vec<usize> = (0..slots.len()).map(|_| slots[index.sample(&mut rng)]).collect();
        let log_each = log_total - (slots.len() as f64).ln();
        let chosen: Vec<Particle> = ancestors.iter().map(|&a| self.particles[a].clone()).collect();
        for (&slot, mut p) in slots.iter().zip(chosen) {
            p.log_weight = log_each;
            p.lineage = self.next_lineage;
            self.next_lineage += 1;
            self.particles[slot] = p;
        }
        self.resamples += 1;
        Ok(())
    }

    fn log_mean_weight(&self) -> f64 {
        self.log_total_weight() - (self.particles.len() as f64).ln()
    }

    pub fn into_output(self) -> RunOutput {
        let vocab = self.model.lm.vocabulary();
        let log_evidence = self.log_mean_weight();
        let particles = self
            .particles
            .iter()
            .map(|p| ParticleRecord {
                text: String::from_utf8_lossy(&vocab.decode(&p.tokens)).into_owned(),
                tokens: p.tokens.clone(),
                log_weight: p.log_weight,
                complete: p.complete,
                lineage: p.lineage,
                log_lm: p.log_lm,
                log_proposal: p.log_proposal,
                log_local: p.log_local,
                log_efficient: p.log_efficient(),
                log_expensive: p.log_expensive(),
            })
            .collect();
        RunOutput {
            method: self.config.method,
            seed: self.seed,
            truncated: self.particles.iter().filter(|p| p.truncated).count(),
            dead_ends: self.particles.iter().filter(|p| p.dead_end).count(),
            faults: self.model.efficient.faults().len() + self.model.expensive.faults().len(),
            all_dead: log_evidence == f64::NEG_INFINITY,
            particles,
            steps: Vec::new(),
            log_evidence,
            resamples: self.resamples,
        }
    }
}

struct StepContext<'a> {
    config: &'a MethodConfig,
    model: &'a Model,
    seed: u64,
}

impl StepContext<'_> {
    fn extend(&self, p: &mut Particle) -> Result<(), RunError> {
        let method = self.config.method;
        let lm = self.model.lm.as_ref();
        let vocab = lm.vocabulary();
        loop {
            let mut rng = stream_rng(self.seed, p.lineage, p.tokens.len() as u64);
            let proposed = if !method.uses_local_proposal() {
                lm_step(&lm.next_distribution(&p.tokens)?, &mut rng)
            } else {
                let target = LocalTarget {
                    context: &p.tokens,
                    lm,
                    efficient: &p.efficient,
                };
                match self.config.proposal {
                    ProposalKind::Exact => exact_local_step(&target, &mut rng),
                    ProposalKind::CharacterTrie => {
                        let trie = self.model.trie.as_deref().ok_or(RunError::NoTrie)?;
                        character_proposal(&target, trie, &mut rng, false)
                    }
                }
            };
            let w = match proposed {
                Ok(w) => w,
                Err(ProposalError::DeadEnd) => {
                    p.dead_end = true;
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            };
            p.log_lm += w.log_lm;
            p.log_proposal = p.log_proposal.zip(w.log_proposal).map(|(a, b)| a + b);
            p.log_local += w.log_set_weight;
            p.pending_local += w.log_set_weight;
            p.efficient = p.efficient.extend(w.token)?.0;
            let (expensive, delta) = p.expensive.extend(w.token)?;
            p.expensive = expensive;
            p.pending_expensive += delta;
            p.tokens.push(w.token);

            if vocab.is_eos(w.token) {
                p.complete = true;
                return Ok(());
            }
            if method.weights_expensive() && p.pending_expensive == f64::NEG_INFINITY {
                return Ok(());
            }
            if p.tokens.len() >= self.config.max_steps {
                p.truncated = true;
                return Ok(());
            }
            match self.config.step_unit {
                StepUnit::Token => return Ok(()),
                StepUnit::SemanticUnit { boundary } => {
                    if vocab.bytes_of(w.token).contains(&boundary) {
                        return Ok(());
                    }
                }
            }
        }
    }
}

/// Runs a method to completion on the current rayon pool. Results depend
/// only on `(config, model, seed)`, not on the pool size.
pub fn run(config: &MethodConfig, model: &Model, seed: u64) -> Result<RunOutput, RunError> {
    let mut system = ParticleSystem::new(config.clone(), model.clone(), seed)?;
    let mut steps = Vec::new();
    while system.has_active() {
        let start = Instant::now();
        system.extend_step()?;
        system.reweight_step();
        let logw = system.log_weights();
        let e = ess_log(&logw);
        let all_dead = log_sum_exp(&logw) == f64::NEG_INFINITY;
        let resampled = if config.method.resamples() && !all_dead && system.has_active() {
            system.maybe_resample()?
        } else {
            false
        };
        steps.push(StepDiagnostics {
            step: system.step(),
            ess: e,
            resampled,
            log_mean_weight: system.log_mean_weight(),
            active: system.particles.iter().filter(|p| p.is_active()).count(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if all_dead {
            log::warn!("all particles dead at step {}", system.step());
            break;
        }
    }
    let mut out = system.into_output();
    out.steps = steps;
    if out.truncated > 0 {
        log::debug!("{} particles truncated at {} tokens", out.truncated, config.max_steps);
    }
    Ok(out)
}
