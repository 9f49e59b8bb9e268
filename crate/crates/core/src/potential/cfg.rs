use std::sync::Arc;

use super::{Potential, PotentialClass, PotentialFault, PotentialState};
use crate::grammar::{Grammar, Recognizer, RecognizerState};
use crate::lm::{TokenId, Vocabulary};
use crate::trie::{NodeId, TokenTrie, ROOT};

/// Boolean grammar potential over decoded bytes: partial sequences score by
/// prefix validity, complete ones by membership.
#[derive(Debug)]
pub struct CfgPotential {
    recognizer: Recognizer,
    vocab: Vocabulary,
    /// Used to score all next tokens in one walk; absent for vocabularies
    /// with duplicate byte strings.
    trie: Option<TokenTrie>,
}

impl CfgPotential {
    pub fn new(grammar: Grammar, vocab: Vocabulary) -> Self {
        let trie = TokenTrie::build(&vocab).ok();
        Self {
            recognizer: Recognizer::new(grammar),
            vocab,
            trie,
        }
    }

    pub fn recognizer(&self) -> &Recognizer {
        &self.recognizer
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(state: &RecognizerState, complete: bool) -> f64 {
        let ok = if complete {
            state.is_complete_member()
        } else {
            state.is_valid_prefix()
        };
        if ok {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl Potential for CfgPotential {
    fn name(&self) -> &str {
        "cfg"
    }

    fn class(&self) -> PotentialClass {
        PotentialClass::Efficient
    }

    fn log_score(&self, tokens: &[TokenId], complete: bool) -> Result<f64, PotentialFault> {
        let state = self.recognizer.state_for(&self.vocab.decode(tokens));
        Ok(Self::score(&state, complete))
    }

    fn start(self: Arc<Self>) -> Arc<dyn PotentialState> {
        let state = self.recognizer.initial();
        Arc::new(CfgState {
            potential: self,
            state,
        })
    }
}

struct CfgState {
    potential: Arc<CfgPotential>,
    state: RecognizerState,
}

impl CfgState {
    fn walk(&self, trie: &TokenTrie, node: NodeId, state: &RecognizerState, out: &mut [f64]) {
        if let Some(t) = trie.token_at(node) {
            out[t as usize] = 0.0;
        }
        for &(b, child) in trie.children(node) {
            if state.allows(b) {
                let next = self.potential.recognizer.advance(state, b);
                self.walk(trie, child, &next, out);
            }
        }
    }
}

impl PotentialState for CfgState {
    fn extend(&self, token: TokenId) -> Arc<dyn PotentialState> {
        let bytes = self.potential.vocab.bytes_of(token);
        let state = if self.state.is_valid_prefix() {
            self.potential.recognizer.advance_all(&self.state, bytes)
        } else {
            self.state.clone()
        };
        Arc::new(CfgState {
            potential: self.potential.clone(),
            state,
        })
    }

    fn log_score(&self, complete: bool) -> Result<f64, PotentialFault> {
        Ok(CfgPotential::score(&self.state, complete))
    }

    fn next_log_scores(&self, vocab: &Vocabulary) -> Result<Vec<f64>, PotentialFault> {
        let mut out = vec![f64::NEG_INFINITY; vocab.len()];
        if !self.state.is_valid_prefix() {
            return Ok(out);
        }
        match &self.potential.trie {
            Some(trie) => self.walk(trie, ROOT, &self.state, &mut out),
            None => {
                for (id, bytes) in vocab.iter() {
                    let s = self.potential.recognizer.advance_all(&self.state, bytes);
                    out[id as usize] = CfgPotential::score(&s, false);
                }
            }
        }
        out[vocab.eos() as usize] = CfgPotential::score(&self.state, true);
        Ok(out)
    }

    fn recognizer(&self) -> Option<(&Recognizer, &RecognizerState)> {
        Some((&self.potential.recognizer, &self.state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_ba() -> Arc<CfgPotential> {
        let g = Grammar::parse(r#"S ::= "ab" | "ba""#).unwrap();
        Arc::new(CfgPotential::new(g, Vocabulary::bytes(b"ab").unwrap()))
    }

    #[test]
    fn prefix_and_membership_scores() {
        let p = ab_ba();
        assert_eq!(p.log_score(&[0], false).unwrap(), 0.0);
        assert_eq!(p.log_score(&[0, 0], false).unwrap(), f64::NEG_INFINITY);
        assert_eq!(p.log_score(&[0, 1], true).unwrap(), 0.0);
        assert_eq!(p.log_score(&[0, 1], false).unwrap(), 0.0);
        assert_eq!(p.log_score(&[0], true).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn batch_scores_match_one_at_a_time() {
        let g = Grammar::parse("S ::= \"(\" S \")\" S | \"\"").unwrap();
        let v = Vocabulary::merged(&["(", ")", "()", "((", "))", ")("]).unwrap();
        let p = Arc::new(CfgPotential::new(g, v.clone()));
        let mut s = p.clone().start();
        for &t in &[0u32, 3, 1] {
            let batch = s.next_log_scores(&v).unwrap();
            for id in 0..v.len() as TokenId {
                let one = if v.is_eos(id) {
                    s.log_score(true).unwrap()
                } else {
                    s.extend(id).log_score(false).unwrap()
                };
                assert_eq!(batch[id as usize], one, "token {id}");
            }
            s = s.extend(t);
        }
    }
}
