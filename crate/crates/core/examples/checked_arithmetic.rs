//! Generation of small assignment programs under a grammar and a per-line
//! evaluator, stepping one line at a time.
//!
//! `cargo run --release --example checked_arithmetic`

use constrained_smc::inference::run;
use constrained_smc::instances;
use constrained_smc::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inst = instances::toy_arithmetic()?;
    for method in [Method::LocalDecoding, Method::FullSMC] {
        let out = run(&inst.config(method, 20), &inst.model, 7)?;
        println!("{method}: {} resamples, log Ẑ = {:.3}", out.resamples, out.log_evidence);
        let mut post = out.posterior().entries;
        post.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        for e in post.iter().take(3) {
            println!("  weight {:.3}\n{}", e.weight, indent(&e.text));
        }
    }
    Ok(())
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}
