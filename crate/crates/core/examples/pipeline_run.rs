//! Runs a configured experiment end to end and prints its report.
//!
//! cargo run --release --example pipeline_run -- configs/env_n50.toml

use std::path::PathBuf;

use tvgp::pipeline::{run_pipeline, ExperimentConfig};

fn main() -> tvgp::Result<()> {
    let path: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "configs/env_n20.toml".into())
        .into();
    let cfg = ExperimentConfig::load(&path)?;
    let out = run_pipeline(&cfg)?;
    for (name, em) in &out.report.emulators {
        let m = &em.full;
        println!(
            "{name}: MASPE {:.3} RMSPE {:.4} MGES {:.3} (sum {:.0}e3), floored {}",
            m.maspe, m.rmspe, m.mges, m.mges_sum_e3, m.floored
        );
    }
    for s in &out.manifest.stages {
        println!("  {:<10} {:>7.2}s", s.stage, s.seconds);
    }
    println!("artifacts in {}", out.dir.display());
    Ok(())
}
