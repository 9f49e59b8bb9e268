//! Exhaustive and Monte Carlo checks of the trie walk against the local
//! target `σ̃(x) = p(x | ctx) · Φ_eff(x | ctx)`.

use std::collections::HashMap;
use std::sync::Arc;

use constrained_smc::lm::UnigramLm;
use constrained_smc::potential::{CfgPotential, FnPotential, Potential, PotentialClass, ProductState};
use constrained_smc::proposal::{character_proposal, LocalTarget};
use constrained_smc::rng::stream_rng;
use constrained_smc::{Grammar, LanguageModel, PotentialProduct, TokenId, TokenTrie, Vocabulary};

use super::{enumerate_walks, mean_se, midpoint, CfgOracle, Scripted};

pub type ByteScore = fn(&[u8], bool) -> f64;

pub fn soft_no_aab(bytes: &[u8], _complete: bool) -> f64 {
    if bytes.windows(3).any(|w| w == b"aab") {
        f64::NEG_INFINITY
    } else {
        -0.3 * bytes.iter().filter(|&&b| b == b'b').count() as f64
    }
}

pub struct Setup {
    pub vocab: Vocabulary,
    pub lm: UnigramLm,
    pub probs: Vec<f64>,
    pub grammar: Grammar,
    pub extra: Option<ByteScore>,
    pub context: Vec<TokenId>,
}

impl Setup {
    pub fn efficient(&self) -> ProductState {
        let mut members: Vec<Arc<dyn Potential>> =
            vec![Arc::new(CfgPotential::new(self.grammar.clone(), self.vocab.clone()))];
        if let Some(f) = self.extra {
            members.push(Arc::new(FnPotential::new("extra", PotentialClass::Efficient, self.vocab.clone(), f)));
        }
        let mut state = PotentialProduct::new(members, self.vocab.eos()).start().unwrap();
        for &t in &self.context {
            state = state.extend(t).unwrap().0;
        }
        state
    }

    pub fn context_bytes(&self) -> Vec<u8> {
        self.vocab.decode(&self.context)
    }

    /// `σ̃(x)` from the definitions, without any library scoring.
    pub fn sigma(&self, oracle: &CfgOracle, x: TokenId) -> f64 {
        let ctx = self.context_bytes();
        let p = self.probs[x as usize];
        let (g, after, complete) = if self.vocab.is_eos(x) {
            (oracle.member(&ctx), ctx.clone(), true)
        } else {
            let mut b = ctx.clone();
            b.extend_from_slice(self.vocab.bytes_of(x));
            (oracle.valid_prefix(&b), b, false)
        };
        if !g {
            return 0.0;
        }
        let phi = match self.extra {
            None => 1.0,
            Some(f) => {
                let before = f(&ctx, false);
                let now = f(&after, complete);
                if now == f64::NEG_INFINITY {
                    0.0
                } else {
                    (now - before).exp()
                }
            }
        };
        p * phi
    }

    pub fn phi_log(&self, x: TokenId) -> f64 {
        let ctx = self.context_bytes();
        match self.extra {
            None => 0.0,
            Some(f) => {
                let complete = self.vocab.is_eos(x);
                let mut b = ctx.clone();
                b.extend_from_slice(self.vocab.bytes_of(x));
                let now = f(&b, complete);
                if now == f64::NEG_INFINITY {
                    now
                } else {
                    now - f(&ctx, false)
                }
            }
        }
    }
}

/// Exhaustive check: every walk of the oracle is replayed through the
/// implementation, and `Σ_walks P(walk) · Σ_{x ∈ S} w_x · 1{x}` must equal
/// `σ̃(x)` for every token.
pub fn exact_check(s: &Setup) {
    let oracle = CfgOracle::new(&s.grammar);
    let ctx = s.context_bytes();
    let dist = s.lm.next_distribution(&s.context).unwrap();
    let allows = |bytes: &[u8]| {
        let mut b = ctx.clone();
        b.extend_from_slice(bytes);
        oracle.valid_prefix(&b)
    };
    let phi = |x: TokenId| s.phi_log(x);
    let walks = enumerate_walks(&s.vocab, &dist, &allows, oracle.member(&ctx), &phi);

    let total_prob: f64 = walks.iter().map(|w| w.prob).sum();
    assert!((total_prob - 1.0).abs() < 1e-12, "walk probabilities sum to {total_prob}");

    let mut expected: HashMap<TokenId, f64> = HashMap::new();
    for w in &walks {
        for &(x, lw) in &w.set {
            *expected.entry(x).or_insert(0.0) += w.prob * lw.exp();
        }
    }
    for x in 0..s.vocab.len() as TokenId {
        let got = expected.get(&x).copied().unwrap_or(0.0);
        let want = s.sigma(&oracle, x);
        assert!((got - want).abs() < 1e-10, "token {x}: {got} vs σ̃ {want}");
    }

    // Replay each walk and each set member through the implementation.
    let trie = TokenTrie::build(&s.vocab).unwrap();
    let efficient = s.efficient();
    let target = LocalTarget {
        context: &s.context,
        lm: &s.lm,
        efficient: &efficient,
    };
    for w in &walks {
        if w.set.is_empty() {
            let mut draws: Vec<f64> = Vec::new();
            for (i, step) in w.q_bars.iter().enumerate() {
                let k = step.iter().position(|&(b, _)| b == w.path[i]).unwrap();
                let q: Vec<f64> = step.iter().map(|&(_, q)| q).collect();
                draws.push(midpoint(&q, k));
            }
            let mut rng = Scripted::new(draws);
            assert!(character_proposal(&target, &trie, &mut rng, false).is_err());
            continue;
        }
        let set_w: Vec<f64> = w.set.iter().map(|&(_, lw)| lw.exp()).collect();
        for (j, &(x, _)) in w.set.iter().enumerate() {
            let mut draws: Vec<f64> = Vec::new();
            for (i, step) in w.q_bars.iter().enumerate() {
                let k = step.iter().position(|&(b, _)| b == w.path[i]).unwrap();
                let q: Vec<f64> = step.iter().map(|&(_, q)| q).collect();
                draws.push(midpoint(&q, k));
            }
            draws.push(midpoint(&set_w, j));
            let mut rng = Scripted::new(draws);
            let out = character_proposal(&target, &trie, &mut rng, true).unwrap();
            assert!(rng.exhausted());
            assert_eq!(out.token, x);
            let trace = out.trace.unwrap();
            let path: Vec<u8> = trace.steps.iter().map(|t| t.byte).collect();
            assert_eq!(path, w.path);
            assert!((trace.steps.last().map_or(1.0, |t| t.inclusion) - w.prob).abs() < 1e-12);
            assert_eq!(trace.set.len(), w.set.len());
            for (a, b) in trace.set.iter().zip(&w.set) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-10, "set weight {} vs {}", a.1, b.1);
            }
            let total: f64 = set_w.iter().sum();
            assert!((out.log_set_weight - total.ln()).abs() < 1e-10);
        }
    }
}

pub fn setup(tokens: &[&str], weights: &[f64], grammar: &str, extra: Option<ByteScore>, context: &str) -> Setup {
    let vocab = Vocabulary::merged(tokens).unwrap();
    assert_eq!(weights.len(), vocab.len());
    let z: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
    let lm = UnigramLm::new(vocab.clone(), &probs).unwrap();
    let context = vocab.encode(context.as_bytes()).unwrap();
    Setup {
        vocab,
        lm,
        probs,
        grammar: Grammar::parse(grammar).unwrap(),
        extra,
        context,
    }
}

pub const GRAMMARS: [&str; 4] = [
    r#"S ::= "a" S "b" | """#,
    r#"S ::= "ab" | "ba""#,
    r#"S ::= "a" S | "b" S | """#,
    r#"S ::= "a" S | "b""#,
];

pub const ALL_TOKENS: [&str; 14] = [
    "a", "b", "aa", "ab", "ba", "bb", "aaa", "aab", "aba", "abb", "baa", "bab", "bba", "bbb",
];

/// Per token of an 8-token multi-byte vocabulary: the seeded Monte Carlo
/// mean of `W · 1{chosen = x}`, its standard error and `σ̃(x)`.
pub fn monte_carlo_z_scores(draws: usize) -> Vec<(TokenId, f64, f64, f64)> {
    let tokens = ["a", "b", "ab", "ba", "aab", "abb", "bab", "bb"];
    let weights = [2.0, 1.5, 1.0, 0.8, 0.6, 0.9, 0.4, 0.7, 0.5];
    let s = setup(&tokens, &weights, GRAMMARS[0], Some(soft_no_aab), "a");
    let oracle = CfgOracle::new(&s.grammar);
    let trie = TokenTrie::build(&s.vocab).unwrap();
    let efficient = s.efficient();
    let target = LocalTarget {
        context: &s.context,
        lm: &s.lm,
        efficient: &efficient,
    };
    let n = s.vocab.len();
    let mut samples = vec![vec![0.0; draws]; n];
    for d in 0..draws {
        let mut rng = stream_rng(7, 0, d as u64);
        if let Ok(out) = character_proposal(&target, &trie, &mut rng, false) {
            let column = &mut samples[out.token as usize];
            column[d] = out.log_set_weight.exp();
        }
    }
    (0..n)
        .map(|x| {
            let (m, se) = mean_se(&samples[x]);
            (x as TokenId, m, se, s.sigma(&oracle, x as TokenId))
        })
        .collect()
}
