//! Importance sampling and sequential Monte Carlo over token sequences.
//!
//! A [`Method`] fixes the proposal, the weight factors and whether
//! resampling happens:
//!
//! | method          | proposal | weight                  | resampling |
//! |-----------------|----------|-------------------------|------------|
//! | `BaseLM`        | `p_lm`   | uniform                 | no         |
//! | `LocalDecoding` | `l_eff`  | uniform                 | no         |
//! | `GrammarOnlyIS` | `l_eff`  | `Π L`                   | no         |
//! | `GrammarOnlySMC`| `l_eff`  | `Π L`                   | yes        |
//! | `SampleRerank`  | `l_eff`  | `Φ_exp`                 | no         |
//! | `FullIS`        | `l_eff`  | `Π L · Φ_exp`           | no         |
//! | `FullSMC`       | `l_eff`  | `Π L · Φ_exp`           | yes        |

mod engine;
mod posterior;

pub use engine::{
    ess, ess_log, run, Model, Particle, ParticleRecord, ParticleSystem, RunError, RunOutput,
    StepDiagnostics,
};
pub use posterior::{pearson, total_variation, Group, PosteriorApproximation, PosteriorEntry};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BaseLM")]
    BaseLm,
    LocalDecoding,
    GrammarOnlyIS,
    GrammarOnlySMC,
    SampleRerank,
    FullIS,
    FullSMC,
}

/// The distribution a method's weights are relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QualityTarget {
    /// `p_lm · Φ`.
    Global,
    /// `p_lm · Φ_eff`.
    Efficient,
    /// `l_eff · Φ_exp`.
    LocalTimesExpensive,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::BaseLm,
        Method::LocalDecoding,
        Method::GrammarOnlyIS,
        Method::GrammarOnlySMC,
        Method::SampleRerank,
        Method::FullIS,
        Method::FullSMC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BaseLm => "BaseLM",
            Method::LocalDecoding => "LocalDecoding",
            Method::GrammarOnlyIS => "GrammarOnlyIS",
            Method::GrammarOnlySMC => "GrammarOnlySMC",
            Method::SampleRerank => "SampleRerank",
            Method::FullIS => "FullIS",
            Method::FullSMC => "FullSMC",
        }
    }

    /// Proposes from the local product rather than the bare model.
    pub fn uses_local_proposal(self) -> bool {
        self != Method::BaseLm
    }

    pub fn weights_local_normalizer(self) -> bool {
        matches!(
            self,
            Method::GrammarOnlyIS | Method::GrammarOnlySMC | Method::FullIS | Method::FullSMC
        )
    }

    pub fn weights_expensive(self) -> bool {
        matches!(self, Method::SampleRerank | Method::FullIS | Method::FullSMC)
    }

    pub fn resamples(self) -> bool {
        matches!(self, Method::GrammarOnlySMC | Method::FullSMC)
    }

    /// Particles carry meaningful importance weights.
    pub fn is_weighted(self) -> bool {
        self.weights_local_normalizer() || self.weights_expensive()
    }

    /// Target of the method's weights. Unweighted methods have tractable
    /// densities and are measured against the global target.
    pub fn quality_target(self) -> QualityTarget {
        match self {
            Method::GrammarOnlyIS | Method::GrammarOnlySMC => QualityTarget::Efficient,
            Method::SampleRerank => QualityTarget::LocalTimesExpensive,
            _ => QualityTarget::Global,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown method `{0}`; expected one of BaseLM, LocalDecoding, GrammarOnlyIS, GrammarOnlySMC, SampleRerank, FullIS, FullSMC")]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    #[default]
    Exact,
    CharacterTrie,
}

/// Increment between intermediate targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepUnit {
    #[default]
    Token,
    /// Up to and including the next token containing the boundary byte.
    SemanticUnit { boundary: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default)]
    pub proposal: ProposalKind,
    #[serde(default = "defaults::particles")]
    pub particles: usize,
    #[serde(default)]
    pub step_unit: StepUnit,
    /// Tokens per particle, EOS included; longer particles are killed.
    #[serde(default = "defaults::max_steps")]
    pub max_steps: usize,
    /// Resample when ESS is strictly below this fraction of N.
    #[serde(default = "defaults::ess_threshold")]
    pub ess_threshold: f64,
    /// Whether complete particles take part in resampling.
    #[serde(default = "defaults::yes")]
    pub resample_complete: bool,
}

mod defaults {
    pub fn particles() -> usize {
        10
    }
    pub fn max_steps() -> usize {
        256
    }
    pub fn ess_threshold() -> f64 {
        1.0 / 3.0
    }
    pub fn yes() -> bool {
        true
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("particles must be at least 1")]
    NoParticles,
    #[error("max_steps must be at least 1")]
    NoSteps,
    #[error("ess_threshold must be in (0, 1], got {0}")]
    Threshold(f64),
}

impl MethodConfig {
    pub fn new(method: Method, particles: usize) -> Self {
        Self {
            method,
            proposal: ProposalKind::Exact,
            particles,
            step_unit: StepUnit::Token,
            max_steps: defaults::max_steps(),
            ess_threshold: defaults::ess_threshold(),
            resample_complete: true,
        }
    }

    pub fn with_proposal(mut self, proposal: ProposalKind) -> Self {
        self.proposal = proposal;
        self
    }

    pub fn with_step_unit(mut self, unit: StepUnit) -> Self {
        self.step_unit = unit;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.particles == 0 {
            return Err(ConfigError::NoParticles);
        }
        if self.max_steps == 0 {
            return Err(ConfigError::NoSteps);
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return Err(ConfigError::Threshold(self.ess_threshold));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        let err = "Beam".parse::<Method>().unwrap_err().to_string();
        for m in Method::ALL {
            assert!(err.contains(m.name()));
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: MethodConfig = serde_json::from_str(r#"{"method":"FullSMC"}"#).unwrap();
        assert_eq!(c, MethodConfig::new(Method::FullSMC, 10));
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.ess_threshold = 0.0;
        assert!(bad.validate().is_err());
        let unit: StepUnit = serde_json::from_str(r#"{"semantic_unit":{"boundary":10}}"#).unwrap();
        assert_eq!(unit, StepUnit::SemanticUnit { boundary: b'\n' });
    }
}
