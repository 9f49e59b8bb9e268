//! Invariants checked over random inputs.

use std::collections::BTreeSet;
use std::sync::Arc;

use constrained_smc::inference::{ess, ess_log, Model, ParticleSystem};
use constrained_smc::lm::UniformLm;
use constrained_smc::potential::{CfgPotential, FnPotential, Potential, PotentialClass};
use constrained_smc::{Grammar, Method, MethodConfig, PotentialProduct, TokenDistribution, TokenId, TokenTrie, Vocabulary};
use proptest::prelude::*;

fn vocab_strategy() -> impl Strategy<Value = Vocabulary> {
    prop::collection::btree_set(prop::collection::vec(prop::sample::select(b"abc".to_vec()), 1..5), 1..16)
        .prop_map(|set: BTreeSet<Vec<u8>>| Vocabulary::new(set.into_iter().collect()).unwrap())
}

fn dist_for(vocab: &Vocabulary, raw: &[f64]) -> TokenDistribution {
    let w: Vec<f64> = (0..vocab.len()).map(|i| raw[i % raw.len()]).collect();
    let z: f64 = w.iter().sum();
    TokenDistribution::new(w.iter().map(|x| (x / z).ln()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trie_mass_matches_brute_force(vocab in vocab_strategy(), raw in prop::collection::vec(0.01f64..1.0, 1..20)) {
        let dist = dist_for(&vocab, &raw);
        let trie = TokenTrie::build(&vocab).unwrap();
        let mass = trie.compute_mass(&dist);
        for node in 0..trie.len() as u32 {
            let prefix = trie.prefix(node);
            let mut brute: f64 = vocab.iter().filter(|(_, b)| b.starts_with(&prefix)).map(|(id, _)| dist.prob(id)).sum();
            if prefix.is_empty() {
                brute += dist.prob(vocab.eos());
            }
            prop_assert!((mass.mass(node) - brute).abs() < 1e-12);
            let at: f64 = vocab.iter().filter(|(_, b)| *b == prefix.as_slice()).map(|(id, _)| dist.prob(id)).sum();
            prop_assert!((mass.eot_mass(node) - at).abs() < 1e-15);
        }
        prop_assert!((mass.mass(0) - 1.0).abs() < 1e-12);
        prop_assert_eq!(mass.eos_mass(), dist.prob(vocab.eos()));
    }

    #[test]
    fn trie_lookup_round_trips(vocab in vocab_strategy()) {
        let trie = TokenTrie::build(&vocab).unwrap();
        for (id, bytes) in vocab.iter() {
            let node = trie.lookup(bytes).unwrap();
            prop_assert_eq!(trie.token_at(node), Some(id));
            prop_assert_eq!(trie.prefix(node), bytes.to_vec());
            prop_assert_eq!(trie.depth(node), bytes.len());
        }
    }
}

fn parens_product(vocab: &Vocabulary) -> PotentialProduct {
    let g = Grammar::parse(r#"S ::= "(" S ")" S | "a" S | """#).unwrap();
    let soft = FnPotential::new("soft", PotentialClass::Efficient, vocab.clone(), |b: &[u8], complete: bool| {
        let depth = b.iter().fold(0i32, |d, &c| d + (c == b'(') as i32 - (c == b')') as i32);
        let base = -0.25 * b.iter().filter(|&&c| c == b'a').count() as f64;
        if complete {
            base - 0.5
        } else {
            base - 0.1 * depth.max(0) as f64
        }
    });
    let members: Vec<Arc<dyn Potential>> = vec![Arc::new(CfgPotential::new(g, vocab.clone())), Arc::new(soft)];
    PotentialProduct::new(members, vocab.eos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn potentials_keep_zero_and_telescope(seq in prop::collection::vec(0u32..4, 0..10), end in any::<bool>()) {
        let vocab = Vocabulary::merged(&["(", ")", "a", "()"]).unwrap();
        let product = parens_product(&vocab);
        let mut state = product.start().unwrap();
        let start = state.log_score();
        prop_assert_eq!(start, product.product_log_score(&[], false).unwrap());
        let mut sum = 0.0;
        let mut dead = false;
        let mut seq: Vec<TokenId> = seq;
        if end {
            seq.push(vocab.eos());
        }
        for (i, &t) in seq.iter().enumerate() {
            let (next, cond) = state.extend(t).unwrap();
            let complete = vocab.is_eos(t);
            let prefix = if complete { &seq[..i] } else { &seq[..=i] };
            let batch = product.product_log_score(prefix, complete).unwrap();
            prop_assert!((next.log_score() - batch).abs() < 1e-12 || (next.log_score() == batch));
            let cond_batch = product.conditional_log_score(t, &seq[..i]).unwrap();
            prop_assert!(cond == cond_batch || (cond - cond_batch).abs() < 1e-12);
            if dead {
                prop_assert_eq!(batch, f64::NEG_INFINITY, "zero must persist");
                prop_assert_eq!(cond, f64::NEG_INFINITY);
            }
            if batch == f64::NEG_INFINITY {
                dead = true;
            } else {
                sum += cond;
                prop_assert!((start + sum - batch).abs() < 1e-9, "conditionals telescope");
            }
            state = next;
            if complete {
                break;
            }
        }
    }

    #[test]
    fn ess_is_between_one_and_n(w in prop::collection::vec(0.0f64..10.0, 1..40)) {
        prop_assume!(w.iter().any(|&x| x > 0.0));
        let e = ess(&w);
        prop_assert!(e >= 1.0 - 1e-9 && e <= w.len() as f64 + 1e-9);
        let logs: Vec<f64> = w.iter().map(|x| x.ln()).collect();
        prop_assert!((ess_log(&logs) - e).abs() < 1e-9 * e.max(1.0));
    }

    #[test]
    fn resampling_fires_below_threshold_and_conserves_weight(
        logw in prop::collection::vec(-8.0f64..2.0, 2..24),
        threshold in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let vocab = Vocabulary::bytes(b"ab").unwrap();
        let lm = Arc::new(UniformLm::new(vocab.clone()));
        let model = Model::new(lm, PotentialProduct::empty(vocab.eos()), PotentialProduct::empty(vocab.eos()));
        let mut config = MethodConfig::new(Method::FullSMC, logw.len());
        config.ess_threshold = threshold;
        let mut sys = ParticleSystem::new(config, model, seed).unwrap();
        for (p, &w) in sys.particles.iter_mut().zip(&logw) {
            p.log_weight = w;
        }
        let before = sys.log_total_weight();
        let e = ess_log(&logw);
        let fired = sys.maybe_resample().unwrap();
        prop_assert_eq!(fired, e < threshold * logw.len() as f64);
        prop_assert!((sys.log_total_weight() - before).abs() < 1e-9);
        if fired {
            let each = before - (logw.len() as f64).ln();
            for p in &sys.particles {
                prop_assert!((p.log_weight - each).abs() < 1e-12);
            }
        } else {
            prop_assert_eq!(sys.log_weights(), logw);
        }
    }
}

#[test]
fn resampling_draws_in_proportion_to_weight() {
    let vocab = Vocabulary::bytes(b"abcd").unwrap();
    let lm = Arc::new(UniformLm::new(vocab.clone()));
    let model = Model::new(lm, PotentialProduct::empty(vocab.eos()), PotentialProduct::empty(vocab.eos()));
    let weights = [0.1f64, 0.2, 0.3, 0.4];
    let mut counts = [0usize; 4];
    let rounds = 5000u64;
    for seed in 0..rounds {
        let mut sys = ParticleSystem::new(MethodConfig::new(Method::FullSMC, 4), model.clone(), seed).unwrap();
        for (i, p) in sys.particles.iter_mut().enumerate() {
            p.log_weight = weights[i].ln();
            p.tokens = vec![i as TokenId];
        }
        sys.resample_multinomial().unwrap();
        for p in &sys.particles {
            counts[p.tokens[0] as usize] += 1;
            assert!(p.lineage >= 4);
        }
    }
    let draws = (rounds * 4) as f64;
    for (c, w) in counts.iter().zip(weights) {
        let se = (w * (1.0 - w) / draws).sqrt();
        assert!((*c as f64 / draws - w).abs() < 4.0 * se, "{counts:?}");
    }
}
