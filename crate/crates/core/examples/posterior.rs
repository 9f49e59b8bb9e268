//! The FullSMC posterior on `nested-parens`, grouped by output and
//! compared with the exact posterior from enumeration.
//!
//! `cargo run --release --example posterior`

use std::collections::BTreeMap;

use constrained_smc::inference::run;
use constrained_smc::instances::{self, DEFAULT_ENUMERATION_CAP};
use constrained_smc::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inst = instances::nested_parens()?;
    let exact = inst.enumerate(DEFAULT_ENUMERATION_CAP)?.text_posterior();
    let config = inst.config(Method::FullSMC, 200);
    let runs = 20;
    let mut avg: BTreeMap<String, f64> = BTreeMap::new();
    for seed in 0..runs {
        let out = run(&config, &inst.model, seed)?;
        let groups = out.posterior().group_and_score(|e| e.text.clone(), |e| (inst.metric)(e.text.as_bytes()));
        for g in groups {
            *avg.entry(g.key).or_insert(0.0) += g.mass / runs as f64;
        }
    }
    let mut rows: Vec<_> = exact.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1));
    println!("{:<14} {:>8} {:>8}", "output", "exact", "smc");
    for (text, p) in rows.into_iter().take(12) {
        let shown = if text.is_empty() { "<empty>" } else { text.as_str() };
        println!("{shown:<14} {p:>8.4} {:>8.4}", avg.get(text).copied().unwrap_or(0.0));
    }
    Ok(())
}
