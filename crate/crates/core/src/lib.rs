//! Sequential Monte Carlo for constrained generation from autoregressive
//! language models.
//!
//! The target is the global product of experts
//! `g(x) ∝ p_lm(x) · Φ(x)` between a language model and a set of
//! potentials. Potentials are split into *efficient* ones, cheap enough to
//! evaluate on every next token (e.g. a grammar prefix check), and
//! *expensive* ones folded into importance weights (e.g. a program checker).
//! Particles are proposed from the locally constrained distribution, either
//! exactly or with the character-trie set-based speedup, then reweighted and
//! adaptively resampled.
//!
//! Modules, bottom up:
//!
//! - [`lm`]: vocabularies, the model trait, n-gram and remote models
//! - [`grammar`]: byte-terminal CFGs with an incremental Earley recognizer
//! - [`potential`]: potential functions and their products
//! - [`trie`]: token trie with per-context probability mass
//! - [`proposal`]: properly weighted next-token proposals
//! - [`inference`]: the particle engine and the seven method configurations
//! - [`estimators`]: approximation-quality estimates and method comparison
//! - [`instances`]: bundled synthetic instances and the brute-force enumerator
//! - [`experiment`]: run specifications and the commands behind `csmc`

pub mod estimators;
pub mod experiment;
pub mod grammar;
pub mod inference;
pub mod instances;
pub mod lm;
pub mod potential;
pub mod proposal;
pub mod rng;
pub mod trie;

pub use grammar::{Grammar, Recognizer, RecognizerState};
pub use inference::{Method, MethodConfig, ProposalKind, StepUnit};
pub use lm::{LanguageModel, TokenDistribution, TokenId, Vocabulary};
pub use potential::{Potential, PotentialClass, PotentialProduct};
pub use trie::TokenTrie;
