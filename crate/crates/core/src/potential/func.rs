use std::sync::Arc;

use super::{Potential, PotentialClass, PotentialFault, PotentialState, RescoreState, Stride};
use crate::lm::{TokenId, Vocabulary};

type ScoreFn = dyn Fn(&[u8], bool) -> f64 + Send + Sync;

/// A potential given by a function of the decoded bytes.
///
/// The function must respect monotone zero and the declared bound.
pub struct FnPotential {
    name: String,
    class: PotentialClass,
    stride: Stride,
    log_bound: f64,
    vocab: Arc<Vocabulary>,
    score: Box<ScoreFn>,
}

impl FnPotential {
    pub fn new<F>(name: &str, class: PotentialClass, vocab: Vocabulary, score: F) -> Self
    where
        F: Fn(&[u8], bool) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            class,
            stride: Stride::EveryToken,
            log_bound: 0.0,
            vocab: Arc::new(vocab),
            score: Box::new(score),
        }
    }

    pub fn with_stride(mut self, stride: Stride) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_log_upper_bound(mut self, bound: f64) -> Self {
        self.log_bound = bound;
        self
    }
}

impl Potential for FnPotential {
    fn name(&self) -> &str {
        &self.name
    }

    fn class(&self) -> PotentialClass {
        self.class
    }

    fn stride(&self) -> Stride {
        self.stride
    }

    fn log_upper_bound(&self) -> f64 {
        self.log_bound
    }

    fn log_score(&self, tokens: &[TokenId], complete: bool) -> Result<f64, PotentialFault> {
        Ok((self.score)(&self.vocab.decode(tokens), complete))
    }

    fn start(self: Arc<Self>) -> Arc<dyn PotentialState> {
        RescoreState::start(self)
    }
}
