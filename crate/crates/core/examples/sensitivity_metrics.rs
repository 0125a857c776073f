//! Sensitivity maps and per-kind channel quality for two sensors.
//!
//! `cargo run --release --example sensitivity_metrics -- [grid]`

use ecvs::domain::{rasterize, FillScenario, Phases};
use ecvs::geometry::{generate_layout, vertex_up_orientation, Solid};
use ecvs::metrics::{MetricsReport, NoiseModel};
use ecvs::sensitivity::{compute_sensitivity, downsample_sensitivity};
use ecvs::solver::capacitance_set;
use nalgebra::UnitQuaternion;

fn main() -> ecvs::Result<()> {
    let n = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(32);
    let phases = Phases::default();
    let empty_domain = rasterize(&FillScenario::Uniform { fraction: 0.0 }, n, 1.0, phases)?;
    let full_domain = rasterize(&FillScenario::Uniform { fraction: 1.0 }, n, 1.0, phases)?;

    let sensors = [
        (Solid::Octahedron, vertex_up_orientation(Solid::Octahedron)),
        (Solid::Dodecahedron, UnitQuaternion::identity()),
    ];
    let mut totals = Vec::new();
    for (solid, orientation) in sensors {
        let layout = generate_layout(solid, 1.0, 0.0526, orientation)?;
        let empty = capacitance_set(&empty_domain, &layout, 1e-8)?;
        let full = capacitance_set(&full_domain, &layout, 1e-8)?;
        let s = downsample_sensitivity(
            &compute_sensitivity(&layout, &empty_domain, 1e-8)?,
            20.min(n),
        )?;
        let report = MetricsReport::compute(&empty, &full, &s, &NoiseModel::default(), 200, 7)?;

        println!("{solid}");
        println!(
            "  {:<14} {:>5} {:>10} {:>10} {:>10}",
            "kind", "count", "range", "ssq", "ssnr"
        );
        for (kind, k) in &report.by_kind {
            println!(
                "  {:<14} {:>5} {:>10.4} {:>10.3} {:>10.3}",
                kind.name(),
                k.count,
                k.mean_dynamic_range,
                k.mean_ssq,
                k.mean_ssnr
            );
        }
        totals.push(report.overall.total_ssq);
    }
    println!(
        "total ssq ratio dodecahedron/octahedron {:.2}",
        totals[1] / totals[0]
    );
    Ok(())
}
