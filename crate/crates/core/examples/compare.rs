//! Runs the config-driven comparison of the default sensor pair on a coarse
//! grid and prints the table.
//!
//! `cargo run --release --example compare -- [grid]`

use ecvs::pipeline::{compare, ExperimentConfig};

fn main() -> ecvs::Result<()> {
    let mut config = ExperimentConfig::default();
    config.grid.solve = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(24);
    config.grid.image = config.grid.image.min(config.grid.solve);
    config.cache_dir = None;
    config.validate()?;

    let c = compare(&config)?;
    println!(
        "{:<22} {:>14} {:>14} {:>8}",
        "quantity", c.names[0], c.names[1], "ratio"
    );
    for (q, a, b) in &c.rows {
        println!("{q:<22} {a:>14.5} {b:>14.5} {:>8.3}", a / b);
    }
    Ok(())
}
