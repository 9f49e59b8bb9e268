//! A user-defined expensive potential built from a closure, combined with
//! a grammar and run under FullSMC.
//!
//! `cargo run --example custom_potential`

use std::sync::Arc;

use constrained_smc::inference::{run, Model};
use constrained_smc::lm::UniformLm;
use constrained_smc::potential::{CfgPotential, FnPotential};
use constrained_smc::{Grammar, Method, MethodConfig, Potential, PotentialClass, PotentialProduct, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::bytes(b"ab")?;
    let grammar = Grammar::parse(r#"S ::= "a" S | "b" S | """#)?;
    let cfg: Arc<dyn Potential> = Arc::new(CfgPotential::new(grammar, vocab.clone()));
    // No two consecutive b's.
    let no_bb: Arc<dyn Potential> = Arc::new(FnPotential::new(
        "no-bb",
        PotentialClass::Expensive,
        vocab.clone(),
        |bytes, _| if bytes.windows(2).any(|w| w == b"bb") { f64::NEG_INFINITY } else { 0.0 },
    ));
    let model = Model::new(
        Arc::new(UniformLm::new(vocab.clone())),
        PotentialProduct::new(vec![cfg], vocab.eos()),
        PotentialProduct::new(vec![no_bb], vocab.eos()),
    );
    let out = run(&MethodConfig::new(Method::FullSMC, 50).with_max_steps(12), &model, 1)?;
    let mut groups = out.posterior().group_and_score(|e| e.text.clone(), |_| 0.0);
    groups.sort_by(|a, b| b.mass.total_cmp(&a.mass));
    for g in groups.iter().take(8) {
        println!("{:<10} {:.3}", if g.key.is_empty() { "<empty>" } else { &g.key }, g.mass);
    }
    Ok(())
}
