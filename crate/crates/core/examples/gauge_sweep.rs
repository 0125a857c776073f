//! Gauges a tilting stratified fill with the plain channel average, linear
//! back projection and the iterative reconstruction.
//!
//! `cargo run --release --example gauge_sweep -- [grid]`

use ecvs::domain::{
    fill_sweep, rasterize, tilt_about_x, volume_fraction_of, FillKind, FillScenario, Phases,
};
use ecvs::gauging::{accuracy_table, normalize_frame, GaugeSettings, Method};
use ecvs::geometry::{generate_layout, Solid};
use ecvs::sensitivity::{compute_sensitivity, downsample_sensitivity};
use ecvs::solver::capacitance_set;
use nalgebra::UnitQuaternion;

fn main() -> ecvs::Result<()> {
    let n = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(32);
    let phases = Phases::default();
    let layout = generate_layout(Solid::Dodecahedron, 1.0, 0.0526, UnitQuaternion::identity())?;
    let solve = |d: &ecvs::domain::VoxelDomain| capacitance_set(d, &layout, 1e-8);
    let empty_domain = rasterize(&FillScenario::Uniform { fraction: 0.0 }, n, 1.0, phases)?;
    let empty = solve(&empty_domain)?;
    let full = solve(&rasterize(
        &FillScenario::Uniform { fraction: 1.0 },
        n,
        1.0,
        phases,
    )?)?;
    let s = downsample_sensitivity(
        &compute_sensitivity(&layout, &empty_domain, 1e-8)?,
        20.min(n),
    )?;

    let mut profiles = Vec::new();
    for tilt in [0.0, 45.0] {
        let mut frames = Vec::new();
        for (_, domain) in fill_sweep(
            FillKind::Stratified,
            11,
            &tilt_about_x(tilt),
            n,
            1.0,
            phases,
        )? {
            frames.push((
                volume_fraction_of(&domain)?,
                normalize_frame(&solve(&domain)?, &empty, &full)?,
            ));
        }
        profiles.push((tilt, frames));
    }

    let reports = accuracy_table(
        "dodecahedron",
        &s,
        &profiles,
        &Method::ALL,
        &GaugeSettings::default(),
    )?;
    for r in &reports {
        println!(
            "{:<10} max error {:.4}  mean error {:.4}  uncalibrated max {:.4}",
            r.method.name(),
            r.max_error,
            r.mean_error,
            r.raw_max_error
        );
    }
    println!(
        "\n{:>6} {:>6} {:>10} {:>10}",
        "tilt", "true", "signal", "estimate"
    );
    for p in &reports[0].points {
        println!(
            "{:>6} {:>6.3} {:>10.4} {:>10.4}",
            p.tilt, p.true_fraction, p.signal, p.estimate
        );
    }
    Ok(())
}
