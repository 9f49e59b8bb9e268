//! Runs FullSMC on `ab-ba` against a remote next-token service.
//!
//! The service receives `POST {"context": [ids]}` and answers
//! `{"logprobs": [...]}` over ids `a=0, b=1, EOS=2`.
//!
//! `CSMC_LM_ENDPOINT=http://127.0.0.1:8080/next cargo run --example remote_lm`

use std::sync::Arc;

use constrained_smc::inference::run;
use constrained_smc::instances;
use constrained_smc::lm::RemoteLm;
use constrained_smc::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Ok(endpoint) = std::env::var("CSMC_LM_ENDPOINT") else {
        eprintln!("set CSMC_LM_ENDPOINT to a next-token service URL");
        return Ok(());
    };
    let inst = instances::ab_ba()?;
    let lm = Arc::new(RemoteLm::new(endpoint, inst.vocabulary().clone()));
    let inst = inst.with_lm(lm)?;
    let out = run(&inst.config(Method::FullSMC, 10), &inst.model, 0)?;
    for g in out.posterior().group_and_score(|e| e.text.clone(), |_| 0.0) {
        println!("{:<4} {:.3}", g.key, g.mass);
    }
    println!("log Ẑ = {:.4}", out.log_evidence);
    Ok(())
}
