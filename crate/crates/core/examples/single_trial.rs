//! Generates one trial and prints every estimator's result for it.
//!
//! cargo run --release --example single_trial -- 0.4

use tpsim::dgm::generate_trial;
use tpsim::harness::{run_replicate, RunPlan, ScenarioSpec};
use tpsim::{IeMechanism, ScenarioConfig, ShiftModel};

fn main() -> tpsim::Result<()> {
    let theta: f64 = std::env::args().nth(1).map_or(0.3, |s| s.parse().expect("theta"));
    let spec = ScenarioSpec::new(IeMechanism::Dar, ShiftModel::Instant, theta);
    let plan = RunPlan::new(ScenarioConfig::pioneer1_defaults(), vec![spec]);
    plan.validate()?;
    let cfg = spec.config(&plan.base);
    let data = generate_trial(&cfg, 0)?;
    println!("{} patients, {} missing post-baseline outcomes", data.n(), data.n_missing_cells());
    println!("{:<6} {:>9} {:>8} {:>8} {:>20}  coding", "method", "estimate", "se", "df", "95% CI");
    for r in run_replicate(&plan, &cfg, &spec.id(false), 0) {
        match &r.error {
            Some(e) => println!("{:<6} failed: {e}", r.method),
            None => println!(
                "{:<6} {:>9.4} {:>8.4} {:>8.1} {:>20}  {}",
                r.method,
                r.estimate,
                r.se,
                r.df,
                format!("({:.3}, {:.3})", r.ci_lo, r.ci_hi),
                r.coding.as_deref().unwrap_or("")
            ),
        }
    }
    Ok(())
}
