//! Sensitivity matrix from single-plate excitation fields.
//!
//! Row `n` belongs to channel `(t, r)`; column `i` is a voxel. The entry is
//! `−∫ ζ_t·ζ_r dv` over voxel `i`: the first-order change of the mutual
//! capacitance (in `ε₀·R`) per unit change of relative permittivity there,
//! so a positive entry means filling that voxel raises the reading.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::domain::{tank_mask, VoxelDomain};
use crate::error::{Error, Result};
use crate::geometry::{Channel, SensorLayout};
use crate::solver::{CapacitanceSet, ForwardModel, PotentialField, DEFAULT_MAX_ITER};

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMatrix {
    pub channels: Vec<Channel>,
    /// Grid edge; the matrix has `n³` columns with zeros outside `mask`.
    pub n: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub layout_hash: String,
}

impl SensitivityMatrix {
    pub fn rows(&self) -> usize {
        self.channels.len()
    }

    pub fn cols(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        let c = self.cols();
        &self.values[channel * c..(channel + 1) * c]
    }

    /// Row restricted to voxels inside the tank mask.
    pub fn masked_row(&self, channel: usize) -> Vec<f64> {
        self.row(channel)
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn row_sum(&self, channel: usize) -> f64 {
        self.row(channel).iter().sum()
    }

    /// Writes the matrix file: the line `ECVSSENS 1`, one line of JSON
    /// header, then `rows × cols` little-endian f64 values, row-major.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = MatrixHeader {
            rows: self.rows(),
            cols: self.cols(),
            grid: [self.n; 3],
            layout_hash: self.layout_hash.clone(),
            channels: self.channels.clone(),
            byte_order: "little-endian f64, row-major".into(),
        };
        writeln!(w, "{MATRIX_MAGIC}")?;
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<SensitivityMatrix> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != MATRIX_MAGIC {
            return Err(Error::InvalidParameter(
                "not a sensitivity matrix file".into(),
            ));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let header: MatrixHeader = serde_json::from_str(line.trim_end())?;
        let n = header.grid[0];
        if header.cols != n * n * n || header.rows != header.channels.len() {
            return Err(Error::ShapeMismatch("matrix header is inconsistent".into()));
        }
        let mut bytes = vec![0u8; header.rows * header.cols * 8];
        reader.read_exact(&mut bytes)?;
        Ok(SensitivityMatrix {
            channels: header.channels,
            n,
            values: bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            mask: tank_mask(n),
            layout_hash: header.layout_hash,
        })
    }
}

const MATRIX_MAGIC: &str = "ECVSSENS 1";

#[derive(Debug, Serialize, Deserialize)]
struct MatrixHeader {
    rows: usize,
    cols: usize,
    grid: [usize; 3],
    layout_hash: String,
    channels: Vec<Channel>,
    byte_order: String,
}

/// Assembles the matrix from one excitation field per plate. Each entry
/// is the field product `−ζ_t·ζ_r` integrated over the voxel, taken on the
/// solver's own link differences so it is the exact derivative of the
/// discrete capacitance.
pub fn sensitivity_from_fields(
    model: &ForwardModel,
    layout: &SensorLayout,
    fields: &[PotentialField],
) -> SensitivityMatrix {
    let n = model.grid();
    let cols = n * n * n;
    let mut values = vec![0.0; layout.channels.len() * cols];
    for (row, ch) in layout.channels.iter().enumerate() {
        let grad = model.permittivity_gradient(&fields[ch.transmit], &fields[ch.receive]);
        for (out, g) in values[row * cols..(row + 1) * cols].iter_mut().zip(grad) {
            *out = -g;
        }
    }
    SensitivityMatrix {
        channels: layout.channels.clone(),
        n,
        values,
        mask: tank_mask(n),
        layout_hash: layout.content_hash(),
    }
}

/// Sensitivity linearized about the all-gas tank (`N` solves).
pub fn compute_sensitivity(
    layout: &SensorLayout,
    empty: &VoxelDomain,
    tol: f64,
) -> Result<SensitivityMatrix> {
    if empty.liquid.iter().any(|&f| f != 0.0) {
        return Err(Error::InvalidParameter(
            "sensitivity reference must be the empty tank".into(),
        ));
    }
    let model = ForwardModel::for_domain(empty, layout)?;
    let fields = model.solve_all(tol, DEFAULT_MAX_ITER)?;
    Ok(sensitivity_from_fields(&model, layout, &fields))
}

/// Volume-weighted overlap of fine cells `[f, f+1)/from` with coarse cells
/// `[c, c+1)/to` along one axis, as `(coarse, weight)` per fine cell.
fn axis_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    (0..from)
        .map(|f| {
            let (lo, hi) = (f as f64 / from as f64, (f + 1) as f64 / from as f64);
            let first = ((lo * to as f64).floor() as usize).min(to - 1);
            let last = ((hi * to as f64).ceil() as usize).clamp(first + 1, to);
            (first..last)
                .filter_map(|c| {
                    let (clo, chi) = (c as f64 / to as f64, (c + 1) as f64 / to as f64);
                    let overlap = hi.min(chi) - lo.max(clo);
                    (overlap > 0.0).then_some((c, overlap * from as f64))
                })
                .collect()
        })
        .collect()
}

/// Aggregates onto a coarser `to³` grid; each coarse value is the
/// volume-weighted sum of the fine values it overlaps, so every row sum is
/// preserved.
pub fn downsample_sensitivity(s: &SensitivityMatrix, to: usize) -> Result<SensitivityMatrix> {
    if to == 0 || to > s.n {
        return Err(Error::ShapeMismatch(format!(
            "cannot aggregate a {}³ grid onto {to}³",
            s.n
        )));
    }
    if to == s.n {
        return Ok(s.clone());
    }
    let w = axis_weights(s.n, to);
    let (fine, coarse) = (s.cols(), to * to * to);
    let mut values = vec![0.0; s.rows() * coarse];
    for row in 0..s.rows() {
        let src = &s.values[row * fine..(row + 1) * fine];
        let dst = &mut values[row * coarse..(row + 1) * coarse];
        for (v, &x) in src.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let (i, j, k) = (v / (s.n * s.n), (v / s.n) % s.n, v % s.n);
            for &(ci, wi) in &w[i] {
                for &(cj, wj) in &w[j] {
                    for &(ck, wk) in &w[k] {
                        dst[(ci * to + cj) * to + ck] += x * wi * wj * wk;
                    }
                }
            }
        }
    }
    Ok(SensitivityMatrix {
        channels: s.channels.clone(),
        n: to,
        values,
        mask: tank_mask(to),
        layout_hash: s.layout_hash.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationResult {
    pub predicted: f64,
    pub measured: f64,
    /// `|predicted − measured| / |measured|`, zero when both vanish.
    pub relative: f64,
}

/// Compares first-order predictions `Σ S_n(i)·δε` with re-solved
/// capacitance changes after raising the permittivity of `voxels` by
/// `delta_eps`. `s` must be on the same grid as `empty`. A single voxel
/// shifts capacitances by about `10⁻⁶` of their value, so `tol` should be
/// near `10⁻¹²`.
pub fn perturbation_check(
    s: &SensitivityMatrix,
    layout: &SensorLayout,
    empty: &VoxelDomain,
    voxels: &[usize],
    delta_eps: f64,
    tol: f64,
) -> Result<Vec<PerturbationResult>> {
    if s.n != empty.n {
        return Err(Error::ShapeMismatch(
            "sensitivity and domain grids differ".into(),
        ));
    }
    let predicted: Vec<f64> = (0..s.rows())
        .map(|row| voxels.iter().map(|&v| s.row(row)[v]).sum::<f64>() * delta_eps)
        .collect();
    let measured = if voxels.is_empty() {
        vec![0.0; s.rows()]
    } else {
        let base_model = ForwardModel::for_domain(empty, layout)?;
        let base_fields = base_model.solve_all(tol, DEFAULT_MAX_ITER)?;
        let base = CapacitanceSet::from_fields(&base_model, layout, &base_fields, "");
        let mut eps = empty.permittivity();
        for &v in voxels {
            eps[v] += delta_eps;
        }
        let model = ForwardModel::with_permittivity(empty, &eps, layout)?;
        let fields = base_fields
            .iter()
            .map(|f| model.solve_voltages(&f.voltages, tol, DEFAULT_MAX_ITER, Some(&f.phi)))
            .collect::<Result<Vec<_>>>()?;
        let perturbed = CapacitanceSet::from_fields(&model, layout, &fields, "");
        perturbed
            .values
            .iter()
            .zip(&base.values)
            .map(|(a, b)| a - b)
            .collect()
    };
    Ok(predicted
        .into_iter()
        .zip(measured)
        .map(|(p, m)| PerturbationResult {
            predicted: p,
            measured: m,
            relative: if m == 0.0 && p == 0.0 {
                0.0
            } else {
                (p - m).abs() / m.abs()
            },
        })
        .collect())
}

/// Trilinear sample of a grid row at normalized position `p` (tank radius
/// 1), using only voxels inside `mask`.
fn sample(row: &[f64], mask: &[bool], n: usize, p: &Vector3<f64>) -> f64 {
    let h = 2.0 / n as f64;
    let g = p.map(|x| (x + 1.0) / h - 0.5);
    let base = g.map(|x| x.floor());
    let (mut acc, mut wsum) = (0.0, 0.0);
    for corner in 0..8 {
        let off = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let mut idx = [0usize; 3];
        let mut w = 1.0;
        let mut valid = true;
        for a in 0..3 {
            let c = base[a] + off[a] as f64;
            if c < 0.0 || c >= n as f64 {
                valid = false;
                break;
            }
            idx[a] = c as usize;
            let t = g[a] - base[a];
            w *= if off[a] == 1 { t } else { 1.0 - t };
        }
        if !valid {
            continue;
        }
        let v = (idx[0] * n + idx[1]) * n + idx[2];
        if mask[v] && w > 0.0 {
            acc += w * row[v];
            wsum += w;
        }
    }
    if wsum > 0.0 {
        acc / wsum
    } else {
        0.0
    }
}

/// Voxel permutation `v ↦ g·v` when `rot` is a signed axis permutation.
fn grid_permutation(rot: &Rotation3<f64>, n: usize) -> Option<Vec<usize>> {
    let m = rot.matrix();
    if m.iter()
        .any(|x| x.abs() > 1e-9 && (x.abs() - 1.0).abs() > 1e-9)
    {
        return None;
    }
    let map = |v: usize| {
        let idx = [v / (n * n), (v / n) % n, v % n];
        let mut out = [0usize; 3];
        for (r, o) in out.iter_mut().enumerate() {
            let c = (0..3).find(|&c| m[(r, c)].abs() > 0.5).unwrap();
            *o = if m[(r, c)] > 0.0 {
                idx[c]
            } else {
                n - 1 - idx[c]
            };
        }
        (out[0] * n + out[1]) * n + out[2]
    };
    Some((0..n * n * n).map(map).collect())
}

/// Relative RMS mismatch `‖S_{g·n}(x) − S_n(g⁻¹x)‖ / ‖S_{g·n}‖` for every
/// channel, where `g` permutes the plates. Grid-preserving rotations map
/// voxels exactly; others resample trilinearly, and then only voxels whose
/// centre is at least `margin` (normalized) inside the wall are compared.
pub fn symmetry_mismatch(
    s: &SensitivityMatrix,
    layout: &SensorLayout,
    rot: &Rotation3<f64>,
    margin: f64,
) -> Result<Vec<f64>> {
    let perm = layout.plate_permutation(rot).ok_or_else(|| {
        Error::InvalidParameter("rotation does not map plates onto plates".into())
    })?;
    let n = s.n;
    let h = 2.0 / n as f64;
    let inv = rot.inverse();
    let exact = grid_permutation(&inv, n);
    let margin = if exact.is_some() { 0.0 } else { margin };
    let centers: Vec<(usize, Vector3<f64>)> = (0..s.cols())
        .filter(|&v| s.mask[v])
        .map(|v| {
            let (i, j, k) = (v / (n * n), (v / n) % n, v % n);
            let c = Vector3::new(i as f64, j as f64, k as f64).map(|x| -1.0 + (x + 0.5) * h);
            (v, c)
        })
        .filter(|(_, c)| c.norm() <= 1.0 - margin)
        .collect();
    s.channels
        .iter()
        .enumerate()
        .map(|(row, ch)| {
            let (a, b) = (perm[ch.transmit], perm[ch.receive]);
            let image = s
                .channels
                .iter()
                .position(|c| (c.transmit, c.receive) == (a.min(b), a.max(b)))
                .ok_or_else(|| Error::InvalidParameter("permuted channel missing".into()))?;
            let (src, dst) = (s.row(row), s.row(image));
            let (mut num, mut den) = (0.0, 0.0);
            for (v, c) in &centers {
                let pulled = match &exact {
                    Some(pull) => src[pull[*v]],
                    None => sample(src, &s.mask, n, &(inv * c)),
                };
                num += (dst[*v] - pulled).powi(2);
                den += dst[*v].powi(2);
            }
            Ok(if den > 0.0 { (num / den).sqrt() } else { 0.0 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Phases;
    use crate::geometry::{axis_aligned_orientation, generate_layout, ChannelKind, Solid};
    use nalgebra::UnitQuaternion;

    fn fixture(solid: Solid, n: usize) -> (SensorLayout, VoxelDomain, SensitivityMatrix) {
        let layout = generate_layout(solid, 1.0, 0.05, UnitQuaternion::identity()).unwrap();
        let empty = VoxelDomain::empty(n, 1.0, Phases::default()).unwrap();
        let s = compute_sensitivity(&layout, &empty, 1e-9).unwrap();
        (layout, empty, s)
    }

    #[test]
    fn adjacent_rows_have_negative_regions() {
        let (layout, _, s) = fixture(Solid::Octahedron, 20);
        for (row, ch) in layout.channels.iter().enumerate() {
            if ch.kind == ChannelKind::Adjacent {
                assert!(s.row(row).iter().any(|&x| x < 0.0));
                assert!(s.row(row).iter().any(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn rows_are_zero_outside_tank() {
        let (_, _, s) = fixture(Solid::Cube, 12);
        for row in 0..s.rows() {
            for (v, &x) in s.row(row).iter().enumerate() {
                if !s.mask[v] {
                    assert_eq!(x, 0.0);
                }
            }
        }
    }

    #[test]
    fn row_sum_matches_uniform_capacitance_slope() {
        // C is exactly linear in a global permittivity scale, so the full
        // row sum should reproduce C(ε=1) to discretization accuracy.
        let (layout, empty, s) = fixture(Solid::Octahedron, 24);
        let c = crate::solver::capacitance_set(&empty, &layout, 1e-9).unwrap();
        for (row, ch) in layout.channels.iter().enumerate() {
            if ch.kind != ChannelKind::Adjacent {
                let rel = (s.row_sum(row) - c.values[row]).abs() / c.values[row];
                assert!(rel < 0.1, "{ch:?}: {} vs {}", s.row_sum(row), c.values[row]);
            }
        }
    }

    #[test]
    fn downsample_identity_and_conservation() {
        let (_, _, s) = fixture(Solid::Cube, 16);
        assert_eq!(downsample_sensitivity(&s, 16).unwrap(), s);
        let d = downsample_sensitivity(&s, 8).unwrap();
        assert_eq!(d.cols(), 512);
        // 2:1 aggregation sums exactly eight fine voxels.
        let fine = |i: usize, j: usize, k: usize| s.row(0)[(i * 16 + j) * 16 + k];
        let mut expect = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    expect += fine(6 + a, 8 + b, 10 + c);
                }
            }
        }
        assert!((d.row(0)[(3 * 8 + 4) * 8 + 5] - expect).abs() < 1e-15);
        for row in 0..s.rows() {
            assert!(
                (d.row_sum(row) - s.row_sum(row)).abs() < 1e-12 * s.row_sum(row).abs().max(1.0)
            );
        }
        let uneven = downsample_sensitivity(&s, 7).unwrap();
        assert!((uneven.total() - s.total()).abs() < 1e-12 * s.total().abs());
        assert!(downsample_sensitivity(&s, 32).is_err());
    }

    #[test]
    fn axis_weights_partition_each_fine_cell() {
        for (from, to) in [(48, 20), (40, 20), (7, 3)] {
            for cell in axis_weights(from, to) {
                let total: f64 = cell.iter().map(|(_, w)| w).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_perturbation_is_zero() {
        let (layout, empty, s) = fixture(Solid::Cube, 10);
        let out = perturbation_check(&s, &layout, &empty, &[], 0.05, 1e-9).unwrap();
        assert!(out
            .iter()
            .all(|r| r.predicted == 0.0 && r.measured == 0.0 && r.relative == 0.0));
    }

    #[test]
    fn requires_empty_reference() {
        let layout = generate_layout(Solid::Cube, 1.0, 0.05, UnitQuaternion::identity()).unwrap();
        let full = crate::domain::rasterize(
            &crate::domain::FillScenario::Uniform { fraction: 1.0 },
            8,
            1.0,
            Phases::default(),
        )
        .unwrap();
        assert!(compute_sensitivity(&layout, &full, 1e-8).is_err());
    }

    #[test]
    fn transmit_receive_swap_is_exact() {
        let layout = generate_layout(Solid::Cube, 1.0, 0.05, UnitQuaternion::identity()).unwrap();
        let empty = VoxelDomain::empty(12, 1.0, Phases::default()).unwrap();
        let model = ForwardModel::for_domain(&empty, &layout).unwrap();
        let fields = model.solve_all(1e-10, DEFAULT_MAX_ITER).unwrap();
        let (a, b) = (
            model.permittivity_gradient(&fields[0], &fields[3]),
            model.permittivity_gradient(&fields[3], &fields[0]),
        );
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            assert_eq!(x, y, "voxel {i}");
        }
    }

    #[test]
    fn single_voxel_born_agreement() {
        let layout =
            generate_layout(Solid::Dodecahedron, 1.0, 0.05, UnitQuaternion::identity()).unwrap();
        let empty = VoxelDomain::empty(20, 1.0, Phases::default()).unwrap();
        let s = compute_sensitivity(&layout, &empty, 1e-13).unwrap();
        let out = perturbation_check(&s, &layout, &empty, &[empty.index(10, 10, 10)], 0.05, 1e-13)
            .unwrap();
        for (ch, r) in layout.channels.iter().zip(&out) {
            if ch.kind.is_non_adjacent() {
                assert!(r.relative < 0.15, "{ch:?}: {r:?}");
                assert!(r.measured > 0.0);
            }
        }
    }

    #[test]
    fn grid_symmetries_permute_rows_exactly() {
        let layout = generate_layout(
            Solid::Octahedron,
            1.0,
            0.05,
            axis_aligned_orientation(Solid::Octahedron),
        )
        .unwrap();
        let empty = VoxelDomain::empty(14, 1.0, Phases::default()).unwrap();
        let s = compute_sensitivity(&layout, &empty, 1e-10).unwrap();
        for rot in layout.symmetry_rotations() {
            let worst = symmetry_mismatch(&s, &layout, &rot, 0.0)
                .unwrap()
                .into_iter()
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "{worst}");
        }
    }

    #[test]
    fn file_round_trip() {
        let (_, _, s) = fixture(Solid::Tetrahedron, 8);
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(SensitivityMatrix::read(buf.as_slice()).unwrap(), s);
    }
}
