//! One step of the character-trie proposal with its trace: the bytes
//! walked, the inclusion probability at each node, and the sampled set
//! with its local weights.
//!
//! `cargo run --example character_proposal`

use std::sync::Arc;

use constrained_smc::lm::UniformLm;
use constrained_smc::potential::CfgPotential;
use constrained_smc::proposal::{character_proposal, LocalTarget};
use constrained_smc::rng::stream_rng;
use constrained_smc::{Grammar, Potential, PotentialProduct, TokenTrie, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::merged(&["(", ")", "()", "((", "))", ")(", "(()", "())"])?;
    let grammar = Grammar::parse(r#"S ::= "(" S ")" S | """#)?;
    let cfg: Arc<dyn Potential> = Arc::new(CfgPotential::new(grammar, vocab.clone()));
    let efficient = PotentialProduct::new(vec![cfg], vocab.eos()).start()?;
    let lm = UniformLm::new(vocab.clone());
    let trie = TokenTrie::build(&vocab)?;

    let context = [0u32];
    let (state, _) = efficient.extend(context[0])?;
    let target = LocalTarget {
        context: &context,
        lm: &lm,
        efficient: &state,
    };
    for seed in 0..3 {
        let mut rng = stream_rng(seed, 0, 0);
        let w = character_proposal(&target, &trie, &mut rng, true)?;
        let trace = w.trace.expect("trace requested");
        println!("seed {seed}: chose {:?}", String::from_utf8_lossy(vocab.bytes_of(w.token)));
        for s in &trace.steps {
            println!("  byte {:?} inclusion {:.4}", s.byte as char, s.inclusion);
        }
        for (t, lw) in &trace.set {
            println!("  set {:<5} log weight {:.4}", format!("{:?}", String::from_utf8_lossy(vocab.bytes_of(*t))), lw);
        }
        println!("  set weight {:.4}", w.log_set_weight.exp());
    }
    Ok(())
}
