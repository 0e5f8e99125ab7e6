//! MaxPro space-filling designs: criterion trace, one-dimensional
//! projections and scaling into the simulator box.
//!
//! cargo run --release --example maxpro_design -- [n] [seed]

use tvgp::design::{maxpro_design, min_pairwise_distance};
use tvgp::simulators::EnvConfig;

fn main() -> tvgp::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let bounds = EnvConfig::default().bounds;

    let d = maxpro_design(n, bounds.len(), seed, 200)?;
    println!("psi: start {:.4}, final {:.4} after {} sweeps", d.initial_psi, d.psi, d.history.len());
    println!("min pairwise distance {:.4}", min_pairwise_distance(&d.points));
    for h in 0..bounds.len() {
        let mut col: Vec<f64> = d.points.column(h).iter().copied().collect();
        col.sort_by(f64::total_cmp);
        let gap = col.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        println!("input {}: smallest projected gap {gap:.4}", h + 1);
    }

    let design = d.into_design(&bounds)?;
    println!("first runs on the natural scale:");
    for j in 0..n.min(5) {
        let row: Vec<String> = design.raw_row(j).iter().map(|v| format!("{v:9.4}")).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
