//! Client for a next-token log-probability service.
//!
//! Protocol: `POST <endpoint>` with body `{"context": [ids...]}`; the reply
//! is `{"logprobs": [f64; |A|+1]}` indexed by token id, EOS at `eos_id`.
//! `null` entries are read as `-inf`. Replies are renormalized; a total
//! probability further than [`DRIFT_WARNING`] from one is reported.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_context, LanguageModel, LmError, TokenDistribution, TokenId, Vocabulary};

pub const DRIFT_WARNING: f64 = 1e-3;

#[derive(Serialize)]
struct Request<'a> {
    context: &'a [TokenId],
}

#[derive(Deserialize)]
struct Reply {
    logprobs: Vec<Option<f64>>,
}

/// A validated reply with its normalization diagnostic.
#[derive(Debug, Clone)]
pub struct RemoteReply {
    pub distribution: TokenDistribution,
    /// `|Σ p - 1|` of the raw payload.
    pub drift: f64,
    pub warning: Option<String>,
}

/// Remote model. Determinism holds only if the backend is deterministic.
#[derive(Debug)]
pub struct RemoteLm {
    endpoint: String,
    vocab: Vocabulary,
    agent: ureq::Agent,
    warnings: AtomicUsize,
}

impl RemoteLm {
    pub fn new(endpoint: impl Into<String>, vocab: Vocabulary) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            vocab,
            agent,
            warnings: AtomicUsize::new(0),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Number of replies so far that needed renormalization beyond the
    /// drift tolerance.
    pub fn drift_warnings(&self) -> usize {
        self.warnings.load(Ordering::Relaxed)
    }

    pub fn query(&self, context: &[TokenId]) -> Result<RemoteReply, LmError> {
        check_context(&self.vocab, context)?;
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(Request { context })
            .map_err(|e| LmError::Network(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LmError::Network(e.to_string()))?;
        let reply: Reply =
            serde_json::from_str(&text).map_err(|e| LmError::Payload(e.to_string()))?;
        self.validate(reply.logprobs)
    }

    fn validate(&self, raw: Vec<Option<f64>>) -> Result<RemoteReply, LmError> {
        if raw.len() != self.vocab.len() {
            return Err(LmError::VocabularyMismatch {
                expected: self.vocab.len(),
                got: raw.len(),
            });
        }
        let weights: Vec<f64> = raw
            .into_iter()
            .map(|v| v.unwrap_or(f64::NEG_INFINITY))
            .collect();
        if weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(LmError::Payload("non-finite log-probability".into()));
        }
        let (distribution, log_total) = TokenDistribution::from_log_weights(weights)
            .map_err(|_| LmError::Payload("all log-probabilities are -inf".into()))?;
        let drift = (log_total.exp() - 1.0).abs();
        let warning = (drift > DRIFT_WARNING).then(|| {
            format!(
                "remote distribution summed to {:.6}; renormalized",
                log_total.exp()
            )
        });
        Ok(RemoteReply {
            distribution,
            drift,
            warning,
        })
    }
}

impl LanguageModel for RemoteLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, LmError> {
        let reply = self.query(context)?;
        if let Some(w) = &reply.warning {
            self.warnings.fetch_add(1, Ordering::Relaxed);
            log::warn!("{}: {w}", self.endpoint);
        }
        Ok(reply.distribution)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm() -> RemoteLm {
        RemoteLm::new("http://127.0.0.1:9", Vocabulary::bytes(b"ab").unwrap())
    }

    #[test]
    fn short_payload_is_a_vocabulary_mismatch() {
        let err = lm().validate(vec![Some(-1.0), Some(-1.0)]).unwrap_err();
        assert_eq!(
            err,
            LmError::VocabularyMismatch {
                expected: 3,
                got: 2
            }
        );
    }

    #[test]
    fn drifting_payload_is_renormalized_with_warning() {
        let p = (0.98f64 / 3.0).ln();
        let reply = lm().validate(vec![Some(p); 3]).unwrap();
        assert!(reply.warning.is_some());
        assert!((reply.drift - 0.02).abs() < 1e-12);
        assert!((reply.distribution.prob(0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn null_entries_are_zero_probability() {
        let reply = lm()
            .validate(vec![Some(0.0), None, None])
            .unwrap();
        assert_eq!(reply.distribution.prob(1), 0.0);
        assert!(reply.warning.is_none());
    }

    #[test]
    fn unreachable_endpoint_is_a_network_error() {
        assert!(matches!(lm().query(&[0]), Err(LmError::Network(_))));
    }
}
