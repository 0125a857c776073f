//! Inter-plate capacitance of an octahedral sensor, empty and full.
//!
//! `cargo run --release --example capacitance -- [grid]`

use ecvs::domain::{rasterize, FillScenario, Phases};
use ecvs::geometry::{generate_layout, Solid};
use ecvs::metrics::dynamic_range;
use ecvs::solver::capacitance_set;
use nalgebra::UnitQuaternion;

fn main() -> ecvs::Result<()> {
    let n = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(32);
    let layout = generate_layout(Solid::Octahedron, 1.0, 0.05, UnitQuaternion::identity())?;
    let phases = Phases::default();
    let solve = |fraction| -> ecvs::Result<_> {
        let domain = rasterize(&FillScenario::Uniform { fraction }, n, 1.0, phases)?;
        capacitance_set(&domain, &layout, 1e-8)
    };
    let empty = solve(0.0)?;
    let full = solve(1.0)?;
    let dr = dynamic_range(&full, &empty)?;

    println!("grid {n}^3, capacitance in units of eps0 * R");
    println!(
        "{:>4} {:>4} {:<14} {:>10} {:>10} {:>8}",
        "tx", "rx", "kind", "empty", "full", "ratio"
    );
    for (i, ch) in empty.channels.iter().enumerate() {
        println!(
            "{:>4} {:>4} {:<14} {:>10.5} {:>10.5} {:>8.4}",
            ch.transmit,
            ch.receive,
            ch.kind.name(),
            empty.values[i],
            full.values[i],
            full.values[i] / empty.values[i]
        );
    }
    let mean = dr.iter().sum::<f64>() / dr.len() as f64;
    println!(
        "mean dynamic range {mean:.5}, reciprocity error {:.2e}",
        empty.reciprocity_error
    );
    Ok(())
}
