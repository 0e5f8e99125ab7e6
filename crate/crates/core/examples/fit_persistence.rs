//! Saves a fitted emulator to JSON, reloads it and checks the reloaded fit
//! predicts identically.
//!
//! cargo run --release --example fit_persistence -- [fit.json]

use tvgp::design::maxpro_design;
use tvgp::pipeline::{fit_ppe, EmulatorFit, ExperimentConfig, Simulator};

const CONFIG: &str = r#"
name = "persist"
output_dir = "unused"
[simulator]
kind = "env"
[design]
train_n = 20
train_seed = 4
diag_seed = 2
"#;

fn main() -> tvgp::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "ppe_fit.json".into());
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let sim = Simulator::from_config(&cfg.simulator)?;
    let train = maxpro_design(20, 4, 4, 200)?.into_design(sim.bounds())?;
    let fit = EmulatorFit::Ppe(Box::new(fit_ppe(&cfg, &sim, &train, &sim.run_design(&train)?)?));
    std::fs::write(&path, fit.to_json())?;
    println!("wrote {path} ({} bytes)", std::fs::metadata(&path)?.len());

    let back = EmulatorFit::load(path.as_ref())?;
    let query = maxpro_design(5, 4, 9, 50)?.into_design(sim.bounds())?;
    let (a, b) = (fit.predict(&query)?, back.predict(&query)?);
    println!("reloaded {} fit predicts identically: {}", back.name(), a == b);
    println!("summary: {:?}", back.summary());
    Ok(())
}
