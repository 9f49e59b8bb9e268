//! FullSMC and FullIS on the `ab-ba` and `a-star` instances: the mean
//! evidence estimate over many runs against the enumerated normalizer.
//!
//! `cargo run --release --example smc_evidence`

use constrained_smc::inference::run;
use constrained_smc::instances::{self, DEFAULT_ENUMERATION_CAP};
use constrained_smc::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["ab-ba", "a-star"] {
        let inst = instances::by_name(name)?;
        let oracle = inst.enumerate(DEFAULT_ENUMERATION_CAP)?;
        println!("{name}: Z = {:.6}", oracle.z_global);
        for method in [Method::FullIS, Method::FullSMC] {
            let config = inst.config(method, 10);
            let runs = 2000;
            let z: Vec<f64> = (0..runs)
                .map(|s| run(&config, &inst.model, s).map(|o| o.log_evidence.exp()))
                .collect::<Result<_, _>>()?;
            let mean = z.iter().sum::<f64>() / runs as f64;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            println!("  {method:<8} mean Ẑ = {mean:.6} ± {:.6}", (var / runs as f64).sqrt());
        }
    }
    Ok(())
}
