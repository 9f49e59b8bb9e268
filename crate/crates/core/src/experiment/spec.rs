use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::grammar::Grammar;
use crate::inference::{Method, MethodConfig, Model, ProposalKind, StepUnit};
use crate::instances::{self, paren_depth, Instance};
use crate::lm::{LanguageModel, NgramModel, RemoteLm};
use crate::potential::{
    CfgPotential, CheckedEvalPotential, FnPotential, Potential, PotentialClass, PotentialProduct,
    ToyEvaluator,
};

/// An experiment description, loaded from JSON.
///
/// ```json
/// {
///   "instance": "nested-parens",
///   "methods": [{"method": "LocalDecoding"}, {"method": "FullSMC", "particles": 10}],
///   "seeds": {"start": 0, "count": 50}
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Name of a bundled instance.
    pub instance: String,
    /// Grammar file replacing the instance grammar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar: Option<PathBuf>,
    /// Expensive potentials added to the instance's own.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub potentials: Vec<PotentialEntry>,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub lm: LmSource,
    #[serde(default)]
    pub seeds: Seeds,
    /// Output path; a directory for `quality`, a file for `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// A method configuration whose unset fields fall back to the instance's
/// length cap and step unit and to the engine defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_unit: Option<StepUnit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_complete: Option<bool>,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            proposal: None,
            particles: None,
            step_unit: None,
            max_steps: None,
            ess_threshold: None,
            resample_complete: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialEntry {
    /// Per-line program checker.
    CheckedEval {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_budget: Option<u64>,
    },
    /// Rejects parenthesis nesting deeper than `depth`.
    MaxParenDepth { depth: usize },
    /// Rejects any output containing one of `bytes`.
    ForbidBytes { bytes: String },
}

impl PotentialEntry {
    fn build(&self, instance: &Instance) -> Arc<dyn Potential> {
        let vocab = instance.vocabulary().clone();
        match self {
            PotentialEntry::CheckedEval { step_budget } => {
                let mut eval = ToyEvaluator::default();
                if let Some(b) = step_budget {
                    eval.step_budget = *b;
                }
                Arc::new(CheckedEvalPotential::new(Arc::new(eval), vocab))
            }
            PotentialEntry::MaxParenDepth { depth } => {
                let depth = *depth;
                Arc::new(FnPotential::new("max-paren-depth", PotentialClass::Expensive, vocab, move |b, _| {
                    if paren_depth(b) <= depth {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                }))
            }
            PotentialEntry::ForbidBytes { bytes } => {
                let banned = bytes.as_bytes().to_vec();
                Arc::new(FnPotential::new("forbid-bytes", PotentialClass::Expensive, vocab, move |b, _| {
                    if b.iter().any(|x| banned.contains(x)) {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum LmSource {
    /// The instance's bundled model.
    #[default]
    Instance,
    /// An n-gram model file written by `csmc train`.
    Trained { path: PathBuf },
    /// A remote next-token endpoint.
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub start: u64,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

impl Default for Seeds {
    fn default() -> Self {
        Self { start: 0, count: 1 }
    }
}

impl Seeds {
    pub fn iter(&self) -> impl Iterator<Item = u64> + Clone {
        self.start..self.start + self.count as u64
    }
}

/// Command-line values that take precedence over the spec.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub out: Option<PathBuf>,
    pub lm_endpoint: Option<String>,
}

fn invalid(path: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

impl RunSpec {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Hex SHA-256 of the compact JSON form after overrides, with `out`
    /// cleared.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(&RunSpec {
            out: None,
            ..self.clone()
        })
        .expect("spec serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seeds.start = seed;
        }
        if let Some(n) = o.particles {
            for m in &mut self.methods {
                m.particles = Some(n);
            }
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(endpoint) = &o.lm_endpoint {
            self.lm = LmSource::Remote {
                endpoint: endpoint.clone(),
            };
        }
    }

    /// Loads the instance with the spec's grammar, potentials and model.
    pub fn build_instance(&self) -> Result<Instance, ExperimentError> {
        let mut inst = instances::by_name(&self.instance).map_err(|e| invalid("instance", e.to_string()))?;
        match &self.lm {
            LmSource::Instance => {}
            LmSource::Trained { path } => {
                if !path.exists() {
                    return Err(invalid("lm.path", format!("{} does not exist", path.display())));
                }
                let lm = NgramModel::load(path).map_err(|e| invalid("lm.path", e.to_string()))?;
                inst = inst
                    .with_lm(Arc::new(lm))
                    .map_err(|e| invalid("lm.path", e.to_string()))?;
            }
            LmSource::Remote { endpoint } => {
                let lm: Arc<dyn LanguageModel> = Arc::new(RemoteLm::new(endpoint.clone(), inst.vocabulary().clone()));
                inst = inst.with_lm(lm).map_err(|e| invalid("lm.endpoint", e.to_string()))?;
            }
        }
        let vocab = inst.vocabulary().clone();
        let eos = vocab.eos();
        let mut efficient = inst.model.efficient.clone();
        if let Some(path) = &self.grammar {
            let source = std::fs::read_to_string(path)
                .map_err(|e| invalid("grammar", format!("{}: {e}", path.display())))?;
            let grammar = Grammar::parse(&source).map_err(|e| invalid("grammar", e.to_string()))?;
            let cfg: Arc<dyn Potential> = Arc::new(CfgPotential::new(grammar, vocab.clone()));
            efficient = PotentialProduct::new(vec![cfg], eos);
        }
        let mut expensive: Vec<Arc<dyn Potential>> = inst.model.expensive.members().to_vec();
        expensive.extend(self.potentials.iter().map(|p| p.build(&inst)));
        inst.model = Model::new(inst.model.lm.clone(), efficient, PotentialProduct::new(expensive, eos))
            .with_trie()
            .map_err(|e| invalid("instance", e.to_string()))?;
        Ok(inst)
    }

    /// Resolves method entries against the instance and checks each
    /// combination.
    pub fn resolve_methods(&self, inst: &Instance) -> Result<Vec<MethodConfig>, ExperimentError> {
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        if self.seeds.count == 0 {
            return Err(invalid("seeds.count", "must be at least 1"));
        }
        let has_grammar = inst.model.efficient.start().ok().and_then(|s| s.recognizer().map(|_| ())).is_some();
        let mut out = Vec::with_capacity(self.methods.len());
        for (i, m) in self.methods.iter().enumerate() {
            let at = |field: &str| format!("methods[{i}].{field}");
            let mut c = inst.config(m.method, m.particles.unwrap_or(10));
            if let Some(p) = m.proposal {
                c.proposal = p;
            }
            if let Some(u) = m.step_unit {
                c.step_unit = u;
            }
            if let Some(s) = m.max_steps {
                c.max_steps = s;
            }
            if let Some(t) = m.ess_threshold {
                c.ess_threshold = t;
            }
            if let Some(r) = m.resample_complete {
                c.resample_complete = r;
            }
            if let Err(e) = c.validate() {
                let field = match e {
                    crate::inference::ConfigError::NoParticles => "particles",
                    crate::inference::ConfigError::NoSteps => "max_steps",
                    crate::inference::ConfigError::Threshold(_) => "ess_threshold",
                };
                return Err(invalid(&at(field), e.to_string()));
            }
            if m.method == Method::BaseLm {
                if self.grammar.is_some() || has_grammar {
                    log::warn!("{}: BaseLM ignores the grammar", at("method"));
                }
                if m.proposal.is_some() {
                    log::warn!("{}: BaseLM ignores the proposal", at("proposal"));
                }
            } else if c.proposal == ProposalKind::CharacterTrie && !has_grammar {
                return Err(invalid(&at("proposal"), "character_trie needs a grammar potential"));
            }
            if !m.method.weights_expensive() && !inst.model.expensive.is_empty() {
                log::info!("{}: {} does not weight expensive potentials", at("method"), m.method);
            }
            out.push(c);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec_defaults() {
        let s = RunSpec::from_json(r#"{"instance":"ab-ba","methods":[{"method":"FullSMC"}]}"#).unwrap();
        assert_eq!(s.seeds, Seeds::default());
        assert_eq!(s.lm, LmSource::Instance);
        let inst = s.build_instance().unwrap();
        let m = s.resolve_methods(&inst).unwrap();
        assert_eq!(m[0].max_steps, 3);
        assert_eq!(m[0].particles, 10);
    }

    #[test]
    fn round_trip_is_idempotent() {
        let text = r#"{"instance":"nested-parens","potentials":[{"kind":"max_paren_depth","depth":1}],
            "methods":[{"method":"LocalDecoding"},{"method":"FullIS","particles":4,"proposal":"character_trie"}],
            "seeds":{"start":3,"count":2}}"#;
        let s = RunSpec::from_json(text).unwrap();
        let again = RunSpec::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.to_json(), again.to_json());
        assert_eq!(s.config_hash(), again.config_hash());
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = RunSpec::from_json(r#"{"instance":"ab-ba","methods":[{"method":"FullSMC"},{"method":"Beam"}]}"#)
            .unwrap_err();
        let msg = e.to_string();
        assert!(msg.starts_with("methods[1].method"), "{msg}");
        for m in Method::ALL {
            assert!(msg.contains(m.name()), "{msg}");
        }
        let s = RunSpec::from_json(r#"{"instance":"ab-ba","methods":[{"method":"FullSMC","particles":0}]}"#).unwrap();
        let inst = s.build_instance().unwrap();
        let e = s.resolve_methods(&inst).unwrap_err().to_string();
        assert!(e.starts_with("methods[0].particles"), "{e}");
        let e = RunSpec::from_json(r#"{"instance":"ab-ba","methods":[],"extra":1}"#).unwrap_err();
        assert!(e.to_string().contains("extra"));
    }

    #[test]
    fn character_proposal_needs_grammar() {
        let s = RunSpec::from_json(
            r#"{"instance":"unconstrained","methods":[{"method":"FullSMC","proposal":"character_trie"}]}"#,
        )
        .unwrap();
        let inst = s.build_instance().unwrap();
        let e = s.resolve_methods(&inst).unwrap_err().to_string();
        assert!(e.starts_with("methods[0].proposal"), "{e}");
    }

    #[test]
    fn overrides_change_the_hash() {
        let mut s = RunSpec::from_json(r#"{"instance":"ab-ba","methods":[{"method":"FullSMC"}]}"#).unwrap();
        let before = s.config_hash();
        s.apply(&Overrides {
            particles: Some(7),
            ..Default::default()
        });
        assert_eq!(s.methods[0].particles, Some(7));
        assert_ne!(before, s.config_hash());
    }

    #[test]
    fn missing_model_file_is_reported() {
        let s = RunSpec::from_json(
            r#"{"instance":"ab-ba","methods":[{"method":"FullSMC"}],"lm":{"source":"trained","path":"/nonexistent/m.json"}}"#,
        )
        .unwrap();
        assert!(s.build_instance().unwrap_err().to_string().starts_with("lm.path"));
    }
}
