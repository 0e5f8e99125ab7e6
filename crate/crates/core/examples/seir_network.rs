//! Regenerates the bundled SEIR commuter network, `data/seir_network.csv`.
//!
//! cargo run --example seir_network -- [out.csv]

use tvgp::simulators::seir::{generate_network, network_csv};

fn main() -> std::io::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/data/seir_network.csv".into());
    let (populations, commuters, seed) = generate_network(15, 2024);
    std::fs::write(&out, network_csv(&populations, &commuters, seed))?;
    println!("wrote {out}: 15 patches, epidemic seeded in patch {seed}");
    Ok(())
}
