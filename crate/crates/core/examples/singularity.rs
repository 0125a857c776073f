//! Cumulative fraction of plate-boundary points crossed by a rising liquid
//! level, upright and tilted. Flat stretches are fills where the sensor sees
//! nothing new; jumps are where many boundaries are crossed at once.

use ecvs::domain::tilt_about_x;
use ecvs::geometry::{generate_layout, vertex_up_orientation, Solid};
use ecvs::metrics::singularity_curve;
use nalgebra::UnitQuaternion;

fn main() -> ecvs::Result<()> {
    let sensors = [
        (
            "octahedron face up",
            generate_layout(Solid::Octahedron, 1.0, 0.0, UnitQuaternion::identity())?,
        ),
        (
            "octahedron vertex up",
            generate_layout(
                Solid::Octahedron,
                1.0,
                0.0,
                vertex_up_orientation(Solid::Octahedron),
            )?,
        ),
        (
            "dodecahedron face up",
            generate_layout(Solid::Dodecahedron, 1.0, 0.0, UnitQuaternion::identity())?,
        ),
    ];
    for (name, layout) in &sensors {
        for tilt in [0.0, 45.0] {
            let curve = singularity_curve(layout, &tilt_about_x(tilt), 100)?;
            let marks: Vec<String> = [0.1, 0.25, 0.5, 0.75, 0.9]
                .iter()
                .map(|&f| format!("{:.2}", curve.cumulative_at(f)))
                .collect();
            println!(
                "{name:<21} tilt {tilt:>4}: at 10/25/50/75/90% fill {}  largest 10% jump {:.2}",
                marks.join(" "),
                curve.max_jump(0.1)
            );
        }
    }
    Ok(())
}
