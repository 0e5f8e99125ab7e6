//! Runs two configured experiments that share a diagnostic set and prints
//! their metrics side by side.
//!
//! cargo run --release --example compare_reports -- configs/env_n20.toml configs/env_n50.toml

use std::path::PathBuf;

use tvgp::pipeline::{compare, run_pipeline, ExperimentConfig, MetricSet};

fn main() -> tvgp::Result<()> {
    let mut args = std::env::args().skip(1);
    let a: PathBuf = args.next().unwrap_or_else(|| "configs/env_n20.toml".into()).into();
    let b: PathBuf = args.next().unwrap_or_else(|| "configs/env_n50.toml".into()).into();
    let ra = run_pipeline(&ExperimentConfig::load(&a)?)?.report;
    let rb = run_pipeline(&ExperimentConfig::load(&b)?)?.report;
    let table = compare(&ra, &rb, MetricSet::Full)?;
    print!("{}", table.to_text());
    Ok(())
}
