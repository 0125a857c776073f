//! Plate and channel counts for every platonic solid, then the channel
//! kinds of a dodecahedral sensor.

use ecvs::geometry::{generate_layout, vertex_up_orientation, Solid};
use ecvs::pipeline::solid_table;

fn main() -> ecvs::Result<()> {
    println!(
        "{:<13} {:>6} {:>8} {:>12} {:>9}",
        "solid", "plates", "channels", "non-adjacent", "rotations"
    );
    for r in solid_table()? {
        println!(
            "{:<13} {:>6} {:>8} {:>12} {:>9}",
            r.solid.name(),
            r.plates,
            r.channels,
            r.non_adjacent,
            r.rotational_order
        );
    }

    let layout = generate_layout(
        Solid::Dodecahedron,
        0.12065,
        0.00635,
        vertex_up_orientation(Solid::Dodecahedron),
    )?;
    println!("\ndodecahedron, vertex up, 6.35 mm gaps");
    for (kind, count) in layout.kind_tally() {
        println!("  {kind:<14} {count}");
    }
    println!("  layout hash {}", layout.content_hash());
    Ok(())
}
