//! Finite-difference electrostatics on the voxel grid.
//!
//! Unknowns live at the centers of voxels inside the field region. Each
//! node couples to its six axis neighbours through a face conductance
//! `ε_face · h` (harmonic mean of the two voxel permittivities). Where an
//! axis link leaves the region, the link is cut at the exact boundary
//! crossing: the conductance becomes `ε · h / θ` with `θ·h` the distance to
//! the crossing, and the Dirichlet value is the potential of whatever
//! conductor (plate or grounded shield) is hit there. The resulting system
//! is symmetric positive definite and is solved with Jacobi-preconditioned
//! conjugate gradients.
//!
//! Lengths are normalized by the tank radius, so charges and capacitances
//! come out in units of `ε₀ · R` per volt.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::VoxelDomain;
use crate::error::{Error, Result};
use crate::geometry::{Channel, SensorLayout, Vec3};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20_000;

const NONE: u32 = u32::MAX;
const GROUND: i32 = -1;
const MIN_THETA: f64 = 1e-3;

const AXES: [[f64; 3]; 6] = [
    [-1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    Electrode(usize),
    Ground,
}

/// Conductor geometry bounding the field region, in normalized coordinates.
pub trait Boundary: Sync {
    fn electrode_count(&self) -> usize;

    fn is_interior(&self, p: &Vec3) -> bool;

    /// Distance along unit `dir` from interior point `p` to the first
    /// conductor surface.
    fn crossing(&self, p: &Vec3, dir: &Vec3) -> f64;

    /// Conductor owning the surface point nearest to `q`.
    fn terminal_near(&self, q: &Vec3) -> Terminal;
}

/// Smallest positive `t` with `|p + t·dir| = radius` (`dir` unit length).
fn sphere_crossing(p: &Vec3, dir: &Vec3, radius: f64) -> Option<f64> {
    let b = p.dot(dir);
    let c = p.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [-b - s, -b + s]
        .into_iter()
        .filter(|&t| t > 0.0)
        .reduce(f64::min)
}

/// Spherical tank wall carrying the layout's plates; the rest of the wall
/// (plate gaps) is grounded shield.
pub struct TankBoundary<'a> {
    pub layout: &'a SensorLayout,
}

impl Boundary for TankBoundary<'_> {
    fn electrode_count(&self) -> usize {
        self.layout.plate_count()
    }

    fn is_interior(&self, p: &Vec3) -> bool {
        p.norm_squared() < 1.0
    }

    fn crossing(&self, p: &Vec3, dir: &Vec3) -> f64 {
        sphere_crossing(p, dir, 1.0).unwrap_or(0.0)
    }

    fn terminal_near(&self, q: &Vec3) -> Terminal {
        match self.layout.plate_at(&q.normalize()) {
            Some(i) => Terminal::Electrode(i),
            None => Terminal::Ground,
        }
    }
}

/// Inner spherical electrode (index 0) inside a grounded outer sphere.
pub struct ConcentricSpheres {
    pub inner: f64,
    pub outer: f64,
}

impl Boundary for ConcentricSpheres {
    fn electrode_count(&self) -> usize {
        1
    }

    fn is_interior(&self, p: &Vec3) -> bool {
        let r2 = p.norm_squared();
        r2 > self.inner * self.inner && r2 < self.outer * self.outer
    }

    fn crossing(&self, p: &Vec3, dir: &Vec3) -> f64 {
        let inner = sphere_crossing(p, dir, self.inner).unwrap_or(f64::INFINITY);
        let outer = sphere_crossing(p, dir, self.outer).unwrap_or(f64::INFINITY);
        inner.min(outer)
    }

    fn terminal_near(&self, q: &Vec3) -> Terminal {
        let r = q.norm();
        if (r - self.inner).abs() < (r - self.outer).abs() {
            Terminal::Electrode(0)
        } else {
            Terminal::Ground
        }
    }
}

#[derive(Clone, Debug)]
pub struct PotentialField {
    /// Potential per unknown node.
    pub phi: Vec<f64>,
    /// Applied potential per electrode.
    pub voltages: Vec<f64>,
    /// Excited electrode for single-plate solves.
    pub excited: Option<usize>,
    pub residual: f64,
    pub iterations: usize,
}

/// Part of a cut link's conductance ending on one conductor.
#[derive(Clone, Copy, Debug)]
struct CutLink {
    node: u32,
    dir: u8,
    terminal: i32,
    conductance: f64,
}

/// Assembled operator for one permittivity map and conductor geometry.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    n: usize,
    h: f64,
    electrodes: usize,
    node_of_voxel: Vec<u32>,
    voxel_of_node: Vec<u32>,
    neighbors: Vec<[u32; 6]>,
    conductance: Vec<[f64; 6]>,
    /// Distance to the boundary crossing for cut links (normalized length).
    cut_length: Vec<[f64; 6]>,
    cuts: Vec<CutLink>,
    diag: Vec<f64>,
    eps: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Rays per face edge used to split a cut link between conductors.
const FOOTPRINT_RAYS: usize = 6;

impl ForwardModel {
    /// Builds the operator for an `n³` grid over `[-1, 1]³` with per-voxel
    /// permittivity `eps`. Voxels outside `mask` are never unknowns.
    ///
    /// A cut link's conductance is shared among the conductors seen by a
    /// bundle of parallel rays covering the link's `h × h` face, so plate
    /// edges are resolved below the grid spacing.
    pub fn new(
        n: usize,
        eps: &[f64],
        mask: Option<&[bool]>,
        boundary: &dyn Boundary,
    ) -> Result<Self> {
        if eps.len() != n * n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} permittivities for a {n}³ grid",
                eps.len()
            )));
        }
        if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "permittivity {e} must be positive"
            )));
        }
        let h = 2.0 / n as f64;
        let center = |i: usize, j: usize, k: usize| {
            let c = |a: usize| -1.0 + (a as f64 + 0.5) * h;
            Vec3::new(c(i), c(j), c(k))
        };
        let mut node_of_voxel = vec![NONE; n * n * n];
        let mut voxel_of_node = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = (i * n + j) * n + k;
                    let allowed = mask.is_none_or(|m| m[v]);
                    if allowed && boundary.is_interior(&center(i, j, k)) {
                        node_of_voxel[v] = voxel_of_node.len() as u32;
                        voxel_of_node.push(v as u32);
                    }
                }
            }
        }
        let count = voxel_of_node.len();
        let mut neighbors = vec![[NONE; 6]; count];
        let mut conductance = vec![[0.0; 6]; count];
        let mut cut_length = vec![[0.0; 6]; count];
        let mut cuts = Vec::new();
        let mut diag = vec![0.0; count];
        let rays = FOOTPRINT_RAYS;
        let mut tally: Vec<(i32, usize)> = Vec::new();
        for node in 0..count {
            let v = voxel_of_node[node] as usize;
            let (i, j, k) = (v / (n * n), (v / n) % n, v % n);
            let p = center(i, j, k);
            for (d, axis) in AXES.iter().enumerate() {
                let step = |a: usize, s: f64| -> Option<usize> {
                    let t = a as isize + s as isize;
                    (t >= 0 && (t as usize) < n).then_some(t as usize)
                };
                let nb = match (step(i, axis[0]), step(j, axis[1]), step(k, axis[2])) {
                    (Some(a), Some(b), Some(c)) => Some((a * n + b) * n + c),
                    _ => None,
                };
                let nb_node = nb.map_or(NONE, |w| node_of_voxel[w]);
                if nb_node != NONE {
                    let w = nb.unwrap();
                    neighbors[node][d] = nb_node;
                    conductance[node][d] = harmonic(eps[v], eps[w]) * h;
                    diag[node] += conductance[node][d];
                    continue;
                }
                let dir = Vec3::new(axis[0], axis[1], axis[2]);
                let t = boundary.crossing(&p, &dir).clamp(MIN_THETA * h, h);
                let total = eps[v] * h * h / t;
                cut_length[node][d] = t;
                conductance[node][d] = total;
                diag[node] += total;

                let a = d / 2;
                let e1 = Vec3::ith((a + 1) % 3, 1.0);
                let e2 = Vec3::ith((a + 2) % 3, 1.0);
                tally.clear();
                for u in 0..rays {
                    for w in 0..rays {
                        let off = |m: usize| ((m as f64 + 0.5) / rays as f64 - 0.5) * h;
                        let o = p + e1 * off(u) + e2 * off(w);
                        let q = if boundary.is_interior(&o) {
                            o + dir * boundary.crossing(&o, &dir).min(h)
                        } else {
                            o
                        };
                        let term = match boundary.terminal_near(&q) {
                            Terminal::Electrode(e) => e as i32,
                            Terminal::Ground => GROUND,
                        };
                        match tally.iter_mut().find(|(t, _)| *t == term) {
                            Some(entry) => entry.1 += 1,
                            None => tally.push((term, 1)),
                        }
                    }
                }
                tally.sort_unstable();
                for &(term, hits) in &tally {
                    cuts.push(CutLink {
                        node: node as u32,
                        dir: d as u8,
                        terminal: term,
                        conductance: total * hits as f64 / (rays * rays) as f64,
                    });
                }
            }
        }
        let eps = voxel_of_node.iter().map(|&v| eps[v as usize]).collect();
        Ok(ForwardModel {
            n,
            h,
            electrodes: boundary.electrode_count(),
            node_of_voxel,
            voxel_of_node,
            neighbors,
            conductance,
            cut_length,
            cuts,
            diag,
            eps,
        })
    }

    pub fn for_domain(domain: &VoxelDomain, layout: &SensorLayout) -> Result<Self> {
        Self::with_permittivity(domain, &domain.permittivity(), layout)
    }

    pub fn with_permittivity(
        domain: &VoxelDomain,
        eps: &[f64],
        layout: &SensorLayout,
    ) -> Result<Self> {
        if (domain.tank_radius - layout.tank_radius).abs() > 1e-12 * layout.tank_radius {
            return Err(Error::ShapeMismatch(
                "domain and layout tank radii differ".into(),
            ));
        }
        Self::new(
            domain.n,
            eps,
            Some(&domain.inside),
            &TankBoundary { layout },
        )
    }

    pub fn grid(&self) -> usize {
        self.n
    }

    /// Grid spacing in tank radii.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn node_count(&self) -> usize {
        self.voxel_of_node.len()
    }

    pub fn electrode_count(&self) -> usize {
        self.electrodes
    }

    pub fn voxel_of_node(&self, node: usize) -> usize {
        self.voxel_of_node[node] as usize
    }

    pub fn node_of_voxel(&self, voxel: usize) -> Option<usize> {
        let n = self.node_of_voxel[voxel];
        (n != NONE).then_some(n as usize)
    }

    fn terminal_voltage(&self, term: i32, voltages: &[f64]) -> f64 {
        if term == GROUND {
            0.0
        } else {
            voltages[term as usize]
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for node in 0..x.len() {
            let mut acc = self.diag[node] * x[node];
            let nb = &self.neighbors[node];
            let c = &self.conductance[node];
            for d in 0..6 {
                if nb[d] != NONE {
                    acc -= c[d] * x[nb[d] as usize];
                }
            }
            y[node] = acc;
        }
    }

    fn rhs(&self, voltages: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.node_count()];
        for cut in &self.cuts {
            b[cut.node as usize] += cut.conductance * self.terminal_voltage(cut.terminal, voltages);
        }
        b
    }

    /// Solves with the given electrode potentials; the shield is at 0 V.
    pub fn solve_voltages(
        &self,
        voltages: &[f64],
        tol: f64,
        max_iter: usize,
        initial: Option<&[f64]>,
    ) -> Result<PotentialField> {
        if voltages.len() != self.electrodes {
            return Err(Error::ShapeMismatch(format!(
                "{} voltages for {} electrodes",
                voltages.len(),
                self.electrodes
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance {tol} must be > 0"
            )));
        }
        let b = self.rhs(voltages);
        let (phi, residual, iterations) = self.pcg(&b, tol, max_iter, initial)?;
        Ok(PotentialField {
            phi,
            voltages: voltages.to_vec(),
            excited: None,
            residual,
            iterations,
        })
    }

    pub fn solve_excitation(
        &self,
        plate: usize,
        tol: f64,
        max_iter: usize,
    ) -> Result<PotentialField> {
        if plate >= self.electrodes {
            return Err(Error::InvalidParameter(format!(
                "plate {plate} out of range"
            )));
        }
        let mut v = vec![0.0; self.electrodes];
        v[plate] = 1.0;
        let mut field = self.solve_voltages(&v, tol, max_iter, None)?;
        field.excited = Some(plate);
        Ok(field)
    }

    /// One single-plate excitation per electrode, solved in parallel.
    pub fn solve_all(&self, tol: f64, max_iter: usize) -> Result<Vec<PotentialField>> {
        (0..self.electrodes)
            .into_par_iter()
            .map(|p| self.solve_excitation(p, tol, max_iter))
            .collect()
    }

    fn pcg(
        &self,
        b: &[f64],
        tol: f64,
        max_iter: usize,
        initial: Option<&[f64]>,
    ) -> Result<(Vec<f64>, f64, usize)> {
        let m = b.len();
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            return Ok((vec![0.0; m], 0.0, 0));
        }
        let mut x = match initial {
            Some(x0) if x0.len() == m => x0.to_vec(),
            _ => vec![0.0; m],
        };
        let mut r = vec![0.0; m];
        self.apply(&x, &mut r);
        for i in 0..m {
            r[i] = b[i] - r[i];
        }
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; m];
        let mut rz = dot(&r, &z);
        let mut residual = dot(&r, &r).sqrt() / b_norm;
        let mut iter = 0;
        while residual > tol {
            if iter >= max_iter {
                return Err(Error::NotConverged {
                    iterations: iter,
                    residual,
                });
            }
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..m {
                z[i] = r[i] / self.diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
            residual = dot(&r, &r).sqrt() / b_norm;
            iter += 1;
        }
        Ok((x, residual, iter))
    }

    /// Charge on every electrode followed by the shield, from the flux
    /// through the cut links ending on each conductor.
    pub fn charges(&self, field: &PotentialField) -> Vec<f64> {
        let mut q = vec![0.0; self.electrodes + 1];
        for cut in &self.cuts {
            let v = self.terminal_voltage(cut.terminal, &field.voltages);
            let slot = if cut.terminal == GROUND {
                self.electrodes
            } else {
                cut.terminal as usize
            };
            q[slot] += cut.conductance * (v - field.phi[cut.node as usize]);
        }
        q
    }

    pub fn plate_charge(&self, field: &PotentialField, plate: usize) -> f64 {
        self.charges(field)[plate]
    }

    pub fn shield_charge(&self, field: &PotentialField) -> f64 {
        self.charges(field)[self.electrodes]
    }

    /// `ζ = −∇φ` at every voxel center (zero outside the field region), by
    /// three-point differences that use the exact distance to cut boundaries.
    pub fn electric_response(&self, field: &PotentialField) -> Vec<[f64; 3]> {
        // Conductance-weighted conductor potential seen through each cut link.
        let mut wall = vec![[0.0; 6]; self.node_count()];
        for cut in &self.cuts {
            let (node, d) = (cut.node as usize, cut.dir as usize);
            wall[node][d] += cut.conductance * self.terminal_voltage(cut.terminal, &field.voltages)
                / self.conductance[node][d];
        }
        let mut out = vec![[0.0; 3]; self.n * self.n * self.n];
        for node in 0..self.node_count() {
            let v = self.voxel_of_node[node] as usize;
            let phi0 = field.phi[node];
            let side = |d: usize| -> (f64, f64) {
                let nb = self.neighbors[node][d];
                if nb != NONE {
                    (field.phi[nb as usize], self.h)
                } else {
                    (wall[node][d], self.cut_length[node][d])
                }
            };
            for axis in 0..3 {
                let (fl, hl) = side(2 * axis);
                let (fr, hr) = side(2 * axis + 1);
                let grad = (hl * hl * (fr - phi0) + hr * hr * (phi0 - fl)) / (hl * hr * (hl + hr));
                out[v][axis] = -grad;
            }
        }
        out
    }

    /// Derivative of the bilinear energy `Σ G·Δφ_a·Δφ_b` with respect to
    /// each voxel's permittivity, on the voxel grid. For two single-plate
    /// fields this is minus the derivative of their mutual capacitance.
    pub fn permittivity_gradient(&self, a: &PotentialField, b: &PotentialField) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n * self.n];
        for node in 0..self.node_count() {
            let e0 = self.eps[node];
            for d in 0..6 {
                let nb = self.neighbors[node][d];
                if nb == NONE || (nb as usize) < node {
                    continue;
                }
                let nb = nb as usize;
                let e1 = self.eps[nb];
                let prod = (a.phi[nb] - a.phi[node]) * (b.phi[nb] - b.phi[node]);
                let s = self.h * 2.0 / ((e0 + e1) * (e0 + e1));
                out[self.voxel_of_node[node] as usize] += s * e1 * e1 * prod;
                out[self.voxel_of_node[nb] as usize] += s * e0 * e0 * prod;
            }
        }
        for cut in &self.cuts {
            let node = cut.node as usize;
            let da = self.terminal_voltage(cut.terminal, &a.voltages) - a.phi[node];
            let db = self.terminal_voltage(cut.terminal, &b.voltages) - b.phi[node];
            out[self.voxel_of_node[node] as usize] += cut.conductance / self.eps[node] * (da * db);
        }
        out
    }

    /// Potential scattered onto the voxel grid (zero outside the region).
    pub fn potential_grid(&self, field: &PotentialField) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n * self.n];
        for (node, &v) in self.voxel_of_node.iter().enumerate() {
            out[v as usize] = field.phi[node];
        }
        out
    }

    /// Mutual capacitance matrix `C[i][j] = −Q_j` with plate `i` at 1 V.
    /// Diagonal entries hold the excited plate's own charge.
    pub fn capacitance_matrix(&self, fields: &[PotentialField]) -> Vec<Vec<f64>> {
        fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let q = self.charges(f);
                (0..self.electrodes)
                    .map(|j| if i == j { q[j] } else { -q[j] })
                    .collect()
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-channel mutual capacitances in units of `ε₀ · R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceSet {
    pub channels: Vec<Channel>,
    pub values: Vec<f64>,
    /// Largest relative residual among the excitation solves.
    pub residual: f64,
    /// Largest `|C_ij − C_ji| / |C_ij|` over all channels.
    pub reciprocity_error: f64,
    pub scenario: String,
}

impl CapacitanceSet {
    pub fn from_fields(
        model: &ForwardModel,
        layout: &SensorLayout,
        fields: &[PotentialField],
        scenario: impl Into<String>,
    ) -> Self {
        let c = model.capacitance_matrix(fields);
        let mut values = Vec::with_capacity(layout.channels.len());
        let mut reciprocity: f64 = 0.0;
        for ch in &layout.channels {
            let (t, r) = (ch.transmit, ch.receive);
            values.push(c[t][r]);
            if c[t][r] != 0.0 {
                reciprocity = reciprocity.max((c[t][r] - c[r][t]).abs() / c[t][r].abs());
            }
        }
        CapacitanceSet {
            channels: layout.channels.clone(),
            values,
            residual: fields.iter().map(|f| f.residual).fold(0.0, f64::max),
            reciprocity_error: reciprocity,
            scenario: scenario.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_channels(&self, other: &CapacitanceSet) -> bool {
        self.channels.len() == other.channels.len()
            && self
                .channels
                .iter()
                .zip(&other.channels)
                .all(|(a, b)| a.transmit == b.transmit && a.receive == b.receive)
    }
}

pub fn solve_excitation(
    domain: &VoxelDomain,
    layout: &SensorLayout,
    plate: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(ForwardModel, PotentialField)> {
    let model = ForwardModel::for_domain(domain, layout)?;
    let field = model.solve_excitation(plate, tol, max_iter)?;
    Ok((model, field))
}

/// Mutual capacitance of every channel for one fill state (`N` solves).
pub fn capacitance_set(
    domain: &VoxelDomain,
    layout: &SensorLayout,
    tol: f64,
) -> Result<CapacitanceSet> {
    let model = ForwardModel::for_domain(domain, layout)?;
    let fields = model.solve_all(tol, DEFAULT_MAX_ITER)?;
    Ok(CapacitanceSet::from_fields(&model, layout, &fields, ""))
}
