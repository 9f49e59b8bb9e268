//! Approximation-quality estimates for three methods on `nested-parens`,
//! with pairwise Welch tests.
//!
//! `cargo run --release --example quality_comparison`

use constrained_smc::experiment::{cmd_quality, MethodSpec, RunSpec, Seeds};
use constrained_smc::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut methods: Vec<MethodSpec> = [Method::LocalDecoding, Method::FullIS, Method::FullSMC]
        .into_iter()
        .map(MethodSpec::new)
        .collect();
    for m in &mut methods {
        m.particles = Some(10);
    }
    let spec = RunSpec {
        instance: "nested-parens".into(),
        grammar: None,
        potentials: Vec::new(),
        methods,
        lm: Default::default(),
        seeds: Seeds { start: 0, count: 100 },
        out: None,
    };
    let (summary, _) = cmd_quality(&spec, None)?;
    println!("oracle log Z = {:.4}", summary.oracle_log_z.unwrap_or(f64::NAN));
    for m in &summary.methods {
        println!(
            "{:<14} {:>9.4} ± {:.4}  acceptance {:.2}",
            m.method, m.estimate.point, m.estimate.std_error, m.acceptance_rate
        );
    }
    for c in &summary.comparisons {
        match &c.result {
            Some(r) => println!("{} vs {}: t = {:.2}, p = {:.2e} {}", c.a, c.b, r.t, r.p, r.band),
            None => println!("{} vs {}: {}", c.a, c.b, c.skipped.as_deref().unwrap_or("")),
        }
    }
    Ok(())
}
