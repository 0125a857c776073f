//! Voxelized spherical tank and fill scenarios.
//!
//! The grid is `n × n × n` cubic voxels spanning `[-R, R]³` around the tank
//! center. Flat voxel index is `(i·n + j)·n + k` for axes `(x, y, z)`, so z
//! varies fastest.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Subsamples per voxel edge used when rasterizing fractional occupancy.
pub const SUBSAMPLES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub eps_gas: f64,
    pub eps_liquid: f64,
}

impl Default for Phases {
    fn default() -> Self {
        Phases {
            eps_gas: 1.0,
            eps_liquid: 2.2,
        }
    }
}

impl Phases {
    /// Measured mineral oil against air.
    pub fn mineral_oil() -> Self {
        Phases {
            eps_gas: 1.0,
            eps_liquid: 2.16,
        }
    }

    pub fn mix(&self, liquid_fraction: f64) -> f64 {
        self.eps_gas + liquid_fraction * (self.eps_liquid - self.eps_gas)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillKind {
    Uniform,
    Stratified,
    Ball,
    Annular,
}

/// Static liquid region. Lengths are in meters relative to the tank center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FillScenario {
    /// Homogeneous mixture with the given liquid fraction in every voxel.
    Uniform {
        fraction: f64,
    },
    /// Liquid below the plane `p · up = level`.
    Stratified {
        level: f64,
        up: Vec3,
    },
    Ball {
        center: Vec3,
        radius: f64,
    },
    /// Shell of the given thickness against the tank wall.
    Annular {
        thickness: f64,
    },
}

/// Volume fraction of a sphere below a plane at signed height `level`
/// (in units of the radius).
pub fn cap_fraction(level: f64) -> f64 {
    let h = (level.clamp(-1.0, 1.0)) + 1.0;
    h * h * (3.0 - h) / 4.0
}

/// Inverse of [`cap_fraction`].
pub fn level_for_fraction(fraction: f64) -> f64 {
    let f = fraction.clamp(0.0, 1.0);
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cap_fraction(mid) < f {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Rotation tilting the gravity axis by `degrees` about +x.
pub fn tilt_about_x(degrees: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vec3::x_axis(), degrees.to_radians())
}

impl FillScenario {
    pub fn stratified_fraction(
        fraction: f64,
        tilt: &UnitQuaternion<f64>,
        tank_radius: f64,
    ) -> Self {
        FillScenario::Stratified {
            level: level_for_fraction(fraction) * tank_radius,
            up: tilt * Vec3::z(),
        }
    }

    /// Scenario of `kind` holding `fraction` of the tank volume. Balls grow
    /// from the center and annular shells grow from the wall inward.
    pub fn from_fraction(
        kind: FillKind,
        fraction: f64,
        tilt: &UnitQuaternion<f64>,
        tank_radius: f64,
    ) -> Self {
        let f = fraction.clamp(0.0, 1.0);
        match kind {
            FillKind::Uniform => FillScenario::Uniform { fraction: f },
            FillKind::Stratified => Self::stratified_fraction(f, tilt, tank_radius),
            FillKind::Ball => FillScenario::Ball {
                center: Vec3::zeros(),
                radius: tank_radius * f.cbrt(),
            },
            FillKind::Annular => FillScenario::Annular {
                thickness: tank_radius * (1.0 - (1.0 - f).cbrt()),
            },
        }
    }

    fn validate(&self, tank_radius: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            FillScenario::Uniform { fraction } if !(0.0..=1.0).contains(fraction) => {
                bad(format!("fill fraction {fraction} outside [0, 1]"))
            }
            FillScenario::Stratified { level, up } => {
                if level.abs() > tank_radius * (1.0 + 1e-12) {
                    bad(format!("liquid level {level} outside the tank"))
                } else if (up.norm() - 1.0).abs() > 1e-9 {
                    bad("gravity axis must be a unit vector".into())
                } else {
                    Ok(())
                }
            }
            FillScenario::Ball { center, radius } => {
                if *radius < 0.0 || center.norm() + radius > tank_radius * (1.0 + 1e-9) {
                    bad(format!(
                        "ball (|c| = {:.4}, r = {radius:.4}) extends outside the tank",
                        center.norm()
                    ))
                } else {
                    Ok(())
                }
            }
            FillScenario::Annular { thickness } if !(0.0..=tank_radius).contains(thickness) => {
                bad(format!("shell thickness {thickness} outside [0, R]"))
            }
            _ => Ok(()),
        }
    }

    fn contains(&self, p: &Vec3, tank_radius: f64) -> bool {
        match self {
            FillScenario::Uniform { .. } => false,
            FillScenario::Stratified { level, up } => p.dot(up) <= *level,
            FillScenario::Ball { center, radius } => {
                (p - center).norm_squared() <= radius * radius * (1.0 + 1e-12)
            }
            FillScenario::Annular { thickness } => p.norm() >= tank_radius - thickness,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelDomain {
    pub n: usize,
    pub tank_radius: f64,
    pub voxel_size: f64,
    pub inside: Vec<bool>,
    pub liquid: Vec<f64>,
    pub phases: Phases,
}

impl VoxelDomain {
    /// Tank with no liquid.
    pub fn empty(n: usize, tank_radius: f64, phases: Phases) -> Result<Self> {
        rasterize(
            &FillScenario::Uniform { fraction: 0.0 },
            n,
            tank_radius,
            phases,
        )
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        (
            idx / (self.n * self.n),
            (idx / self.n) % self.n,
            idx % self.n,
        )
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.coords(idx);
        voxel_center(self.n, self.tank_radius, i, j, k)
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&m| m).count()
    }

    /// Per-voxel relative permittivity with linear mixing.
    pub fn permittivity(&self) -> Vec<f64> {
        self.liquid.iter().map(|&f| self.phases.mix(f)).collect()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_size.powi(3)
    }
}

pub fn voxel_center(n: usize, tank_radius: f64, i: usize, j: usize, k: usize) -> Vec3 {
    let h = 2.0 * tank_radius / n as f64;
    let c = |a: usize| -tank_radius + (a as f64 + 0.5) * h;
    Vec3::new(c(i), c(j), c(k))
}

fn subsamples(c: Vec3, h: f64) -> impl Iterator<Item = Vec3> {
    let off = move |m: usize| ((m as f64 + 0.5) / SUBSAMPLES as f64 - 0.5) * h;
    (0..SUBSAMPLES.pow(3)).map(move |m| {
        let (a, b, d) = (
            m / (SUBSAMPLES * SUBSAMPLES),
            (m / SUBSAMPLES) % SUBSAMPLES,
            m % SUBSAMPLES,
        );
        c + Vec3::new(off(a), off(b), off(d))
    })
}

/// Mask of voxels whose centers lie strictly inside the tank.
pub fn tank_mask(n: usize) -> Vec<bool> {
    let mut mask = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                mask.push(voxel_center(n, 1.0, i, j, k).norm() < 1.0);
            }
        }
    }
    mask
}

pub fn rasterize(
    scenario: &FillScenario,
    n: usize,
    tank_radius: f64,
    phases: Phases,
) -> Result<VoxelDomain> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "grid must have at least one voxel".into(),
        ));
    }
    if !(tank_radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tank radius {tank_radius} must be > 0"
        )));
    }
    scenario.validate(tank_radius)?;
    let h = 2.0 * tank_radius / n as f64;
    let inside = tank_mask(n);
    let mut liquid = vec![0.0; n * n * n];
    for (idx, cell) in liquid.iter_mut().enumerate() {
        if !inside[idx] {
            continue;
        }
        if let FillScenario::Uniform { fraction } = scenario {
            *cell = *fraction;
            continue;
        }
        let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
        let c = voxel_center(n, tank_radius, i, j, k);
        // Only the part of a boundary voxel inside the wall holds liquid.
        let (mut hits, mut total) = (0usize, 0usize);
        for p in subsamples(c, h).filter(|p| p.norm() < tank_radius) {
            total += 1;
            hits += scenario.contains(&p, tank_radius) as usize;
        }
        *cell = if total == 0 {
            scenario.contains(&c, tank_radius) as u8 as f64
        } else {
            hits as f64 / total as f64
        };
    }
    Ok(VoxelDomain {
        n,
        tank_radius,
        voxel_size: h,
        inside,
        liquid,
        phases,
    })
}

pub fn volume_fraction_of(domain: &VoxelDomain) -> Result<f64> {
    let (sum, count) = domain
        .liquid
        .iter()
        .zip(&domain.inside)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (&f, _)| (s + f, c + 1));
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// Evenly spaced fill fractions from empty to full, both ends included.
pub fn fill_sweep(
    kind: FillKind,
    steps: usize,
    tilt: &UnitQuaternion<f64>,
    n: usize,
    tank_radius: f64,
    phases: Phases,
) -> Result<Vec<(f64, VoxelDomain)>> {
    if steps < 2 {
        return Err(Error::InvalidParameter(format!(
            "sweep needs at least 2 steps, got {steps}"
        )));
    }
    (0..steps)
        .map(|s| {
            let f = s as f64 / (steps - 1) as f64;
            let scenario = FillScenario::from_fraction(kind, f, tilt, tank_radius);
            rasterize(&scenario, n, tank_radius, phases).map(|d| (f, d))
        })
        .collect()
}

/// Ball positions along the gravity axis from touching the top wall to
/// touching the bottom wall.
pub fn ball_path(
    ball_radius: f64,
    steps: usize,
    tank_radius: f64,
    up: &Vec3,
) -> Result<Vec<FillScenario>> {
    if steps < 2 {
        return Err(Error::InvalidParameter(
            "ball path needs at least 2 positions".into(),
        ));
    }
    if !(ball_radius > 0.0 && ball_radius < tank_radius) {
        return Err(Error::InvalidParameter(format!(
            "ball radius {ball_radius} must be in (0, R)"
        )));
    }
    let travel = tank_radius - ball_radius;
    let up = up.normalize();
    Ok((0..steps)
        .map(|s| {
            let t = travel * (1.0 - 2.0 * s as f64 / (steps - 1) as f64);
            FillScenario::Ball {
                center: up * t,
                radius: ball_radius,
            }
        })
        .collect())
}

/// Exact sphere volume fraction of a ball of radius `r` in a tank of radius `tank_radius`.
pub fn ball_fraction(r: f64, tank_radius: f64) -> f64 {
    (r / tank_radius).powi(3)
}

pub fn sphere_volume(r: f64) -> f64 {
    4.0 / 3.0 * PI * r * r * r
}

const GRID_MAGIC: &str = "ECVSGRID 1";

/// Header of a voxel grid file.
///
/// File layout: the line `ECVSGRID 1`, one line of JSON (this header), then
/// `n³` little-endian IEEE-754 f64 values in flat voxel order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub shape: [usize; 3],
    pub spacing: f64,
    pub tank_radius: f64,
    pub eps_gas: f64,
    pub eps_liquid: f64,
    pub field: String,
    pub order: String,
    pub byte_order: String,
}

impl GridHeader {
    pub fn new(n: usize, tank_radius: f64, phases: Phases, field: &str) -> Self {
        GridHeader {
            shape: [n, n, n],
            spacing: 2.0 * tank_radius / n as f64,
            tank_radius,
            eps_gas: phases.eps_gas,
            eps_liquid: phases.eps_liquid,
            field: field.to_string(),
            order: "row-major (x, y, z), z fastest".to_string(),
            byte_order: "little-endian f64".to_string(),
        }
    }
}

pub fn write_grid<W: Write>(mut w: W, header: &GridHeader, values: &[f64]) -> Result<()> {
    let expected: usize = header.shape.iter().product();
    if values.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} values for shape {:?}",
            values.len(),
            header.shape
        )));
    }
    writeln!(w, "{GRID_MAGIC}")?;
    serde_json::to_writer(&mut w, header)?;
    writeln!(w)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid<R: Read>(r: R) -> Result<(GridHeader, Vec<f64>)> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != GRID_MAGIC {
        return Err(Error::InvalidParameter("not a voxel grid file".into()));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let header: GridHeader = serde_json::from_str(line.trim_end())?;
    let count: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; count * 8];
    reader.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

impl VoxelDomain {
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_grid(
            file,
            &GridHeader::new(self.n, self.tank_radius, self.phases, "liquid_fraction"),
            &self.liquid,
        )
    }

    pub fn read_dump(path: &Path) -> Result<VoxelDomain> {
        let (header, liquid) = read_grid(std::fs::File::open(path)?)?;
        let n = header.shape[0];
        if header.shape != [n, n, n] {
            return Err(Error::ShapeMismatch("domain grids are cubic".into()));
        }
        Ok(VoxelDomain {
            n,
            tank_radius: header.tank_radius,
            voxel_size: header.spacing,
            inside: tank_mask(n),
            liquid,
            phases: Phases {
                eps_gas: header.eps_gas,
                eps_liquid: header.eps_liquid,
            },
        })
    }
}
