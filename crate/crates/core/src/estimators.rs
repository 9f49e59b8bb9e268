//! Approximation-quality estimates `log Z − KL(q ‖ σ)` and method
//! comparison.
//!
//! Each run yields one scalar lower-bounding the quality of its output
//! distribution; estimates aggregate those scalars over independent runs.
//! Methods that can emit zero-target outputs are scored through their
//! rejection-sampled variants: `log(acceptance) + mean over accepted runs`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::inference::{QualityTarget, RunOutput};
use crate::lm::log_sum_exp;

/// Minimum runs per method for [`compare_methods`].
pub const MIN_COMPARISON_RUNS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need at least {MIN_COMPARISON_RUNS} runs per method, got {0}")]
    TooFewRuns(usize),
    #[error("run-level estimates must be finite")]
    NonFinite,
    #[error("output density is not tractable for a set-based proposal")]
    IntractableDensity,
    #[error("run has no particles")]
    NoParticles,
}

#[derive(Debug, Clone, Serialize)]
pub struct QualityEstimate {
    pub label: String,
    pub target: QualityTarget,
    /// Mean of the run-level estimates, in nats.
    pub point: f64,
    pub std_error: f64,
    pub runs: usize,
}

impl QualityEstimate {
    /// Mean and standard error of run-level values. A `-inf` value makes
    /// the point `-inf` with infinite standard error.
    pub fn from_samples(label: &str, target: QualityTarget, samples: &[f64]) -> Self {
        let (point, std_error) = mean_and_se(samples);
        Self {
            label: label.to_string(),
            target,
            point,
            std_error,
            runs: samples.len(),
        }
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// `log σ̃(x) − log q(x)` for one sample.
pub fn single_sample_quality(log_target: f64, log_proposal: f64) -> f64 {
    if log_target == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        log_target - log_proposal
    }
}

/// Log mean importance weight of one K-particle run.
pub fn k_particle_is_quality(log_weights: &[f64]) -> f64 {
    if log_weights.is_empty() {
        return f64::NEG_INFINITY;
    }
    log_sum_exp(log_weights) - (log_weights.len() as f64).ln()
}

/// Log evidence of one SMC run.
pub fn smc_quality(run: &RunOutput) -> f64 {
    run.log_evidence
}

/// Run-level quality against the method's own target, or `None` when the
/// run's output has zero target density (a rejected attempt).
///
/// Unweighted methods are scored by their first particle's density ratio
/// against the global target; weighted methods by their log mean weight.
pub fn run_quality(run: &RunOutput) -> Result<Option<f64>, EstimatorError> {
    if run.method.is_weighted() {
        let q = k_particle_is_quality(&run.log_weights());
        return Ok((q > f64::NEG_INFINITY).then_some(q));
    }
    let p = run.particles.first().ok_or(EstimatorError::NoParticles)?;
    let log_q = p.log_proposal.ok_or(EstimatorError::IntractableDensity)?;
    if !p.complete {
        return Ok(None);
    }
    let log_target = p.log_lm + p.log_efficient + p.log_expensive;
    let q = single_sample_quality(log_target, log_q);
    Ok((q > f64::NEG_INFINITY).then_some(q))
}

/// Quality of a rejection-sampled variant.
#[derive(Debug, Clone, Serialize)]
pub struct RejectionQuality {
    pub attempted: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Mean run-level estimate over accepted attempts.
    pub accepted_mean: f64,
    /// `log(acceptance_rate) + accepted_mean`.
    pub point: f64,
    /// Standard error of `point`, with a delta-method term for the
    /// estimated acceptance rate.
    pub std_error: f64,
    /// Accepted values shifted by `log(acceptance_rate)`, one per accepted
    /// attempt, for method comparison.
    #[serde(skip)]
    pub corrected_samples: Vec<f64>,
}

impl RejectionQuality {
    /// From attempt outcomes: `None` for a rejected attempt.
    pub fn from_attempts<I: IntoIterator<Item = Option<f64>>>(attempts: I) -> Self {
        let mut attempted = 0;
        let mut values = Vec::new();
        for a in attempts {
            attempted += 1;
            if let Some(v) = a {
                values.push(v);
            }
        }
        let accepted = values.len();
        let rate = if attempted == 0 {
            0.0
        } else {
            accepted as f64 / attempted as f64
        };
        if accepted == 0 {
            log::warn!("no accepted attempts out of {attempted}");
            return Self {
                attempted,
                accepted,
                acceptance_rate: rate,
                accepted_mean: f64::NAN,
                point: f64::NEG_INFINITY,
                std_error: f64::INFINITY,
                corrected_samples: Vec::new(),
            };
        }
        let (mean, se) = mean_and_se(&values);
        let log_rate = rate.ln();
        let rate_se = ((1.0 - rate) / (rate * attempted as f64)).sqrt();
        let se = if accepted < 2 { f64::INFINITY } else { (se * se + rate_se * rate_se).sqrt() };
        Self {
            attempted,
            accepted,
            acceptance_rate: rate,
            accepted_mean: mean,
            point: log_rate + mean,
            std_error: se,
            corrected_samples: values.iter().map(|v| v + log_rate).collect(),
        }
    }

    pub fn estimate(&self, label: &str, target: QualityTarget) -> QualityEstimate {
        QualityEstimate {
            label: label.to_string(),
            target,
            point: self.point,
            std_error: self.std_error,
            runs: self.attempted,
        }
    }
}

/// Runs `attempt(i)` for `i in 0..budget`, treating `None` as rejection.
pub fn rejection_quality<F>(budget: usize, mut attempt: F) -> RejectionQuality
where
    F: FnMut(u64) -> Option<f64>,
{
    RejectionQuality::from_attempts((0..budget as u64).map(&mut attempt))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub mean_a: f64,
    pub mean_b: f64,
    /// Welch t statistic for `a − b`.
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// `***` for p < 0.001, `**` for p < 0.01, `ns` otherwise.
    pub band: String,
    pub identical: bool,
}

/// Welch two-sample t-test.
pub fn compare_methods(a: &[f64], b: &[f64]) -> Result<Comparison, EstimatorError> {
    let n = a.len().min(b.len());
    if n < MIN_COMPARISON_RUNS {
        return Err(EstimatorError::TooFewRuns(n));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let identical = ma == mb;
        let (t, p) = if identical {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(ma - mb), 0.0)
        };
        return Ok(Comparison {
            mean_a: ma,
            mean_b: mb,
            t,
            df: na + nb - 2.0,
            p,
            band: band(p).to_string(),
            identical,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(Comparison {
        mean_a: ma,
        mean_b: mb,
        t,
        df,
        p,
        band: band(p).to_string(),
        identical: false,
    })
}

fn band(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else {
        "ns"
    }
}
