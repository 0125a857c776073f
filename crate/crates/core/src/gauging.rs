//! Volume-fraction estimation from capacitance frames: channel averaging
//! with a cubic calibration, and image reconstruction by linear back
//! projection or projected Landweber iteration.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{write_grid, GridHeader, Phases};
use crate::error::{Error, Result};
use crate::geometry::{Channel, ChannelKind};
use crate::sensitivity::SensitivityMatrix;
use crate::solver::CapacitanceSet;

/// Per-channel capacitance mapped so the empty tank reads 0 and the full
/// tank reads 1. Channels without dynamic range are marked invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedFrame {
    pub channels: Vec<Channel>,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl NormalizedFrame {
    /// Frame with every channel set to `value`.
    pub fn constant(channels: &[Channel], value: f64) -> Self {
        NormalizedFrame {
            channels: channels.to_vec(),
            values: vec![value; channels.len()],
            valid: vec![true; channels.len()],
        }
    }
}

pub fn normalize_frame(
    c: &CapacitanceSet,
    empty: &CapacitanceSet,
    full: &CapacitanceSet,
) -> Result<NormalizedFrame> {
    normalize_against(c, empty, empty, full)
}

/// `(C − zero) / (full − empty)`, used directly when the frame's zero
/// reference differs from the empty tank.
pub fn normalize_against(
    c: &CapacitanceSet,
    zero: &CapacitanceSet,
    empty: &CapacitanceSet,
    full: &CapacitanceSet,
) -> Result<NormalizedFrame> {
    if !(c.same_channels(zero) && c.same_channels(empty) && c.same_channels(full)) {
        return Err(Error::ShapeMismatch(
            "frames have different channels".into(),
        ));
    }
    let mut values = Vec::with_capacity(c.len());
    let mut valid = Vec::with_capacity(c.len());
    for i in 0..c.len() {
        let dr = full.values[i] - empty.values[i];
        if dr == 0.0 {
            warn!(
                "channel {:?} has no dynamic range and is excluded",
                c.channels[i]
            );
            values.push(0.0);
            valid.push(false);
        } else {
            values.push((c.values[i] - zero.values[i]) / dr);
            valid.push(true);
        }
    }
    Ok(NormalizedFrame {
        channels: c.channels.clone(),
        values,
        valid,
    })
}

/// Unweighted mean of the valid non-adjacent-kind channels (every kind
/// except `adjacent`).
pub fn ecvs_average(frame: &NormalizedFrame) -> Result<f64> {
    let used: Vec<f64> = frame
        .channels
        .iter()
        .zip(&frame.values)
        .zip(&frame.valid)
        .filter(|((ch, _), &ok)| ok && ch.kind != ChannelKind::Adjacent)
        .map(|((_, &v), _)| v)
        .collect();
    if used.is_empty() {
        return Err(Error::UnsupportedLayout(
            "no usable non-adjacent channels to average".into(),
        ));
    }
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}

pub const DEFAULT_ENDPOINT_WEIGHT: f64 = 100.0;

/// Cubic map from an averaged signal to volume fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    /// `a0 + a1·x + a2·x² + a3·x³`.
    pub coefficients: [f64; 4],
    pub endpoint_weight: f64,
    /// `(true_fraction, signal)` points the curve was fitted to.
    pub points: Vec<(f64, f64)>,
    /// `curve(signal) − true_fraction` per point.
    pub residuals: Vec<f64>,
}

impl CalibrationCurve {
    pub fn identity() -> Self {
        CalibrationCurve {
            coefficients: [0.0, 1.0, 0.0, 0.0],
            endpoint_weight: DEFAULT_ENDPOINT_WEIGHT,
            points: Vec::new(),
            residuals: Vec::new(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let [a0, a1, a2, a3] = self.coefficients;
        a0 + x * (a1 + x * (a2 + x * a3))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let [_, a1, a2, a3] = self.coefficients;
        a1 + x * (2.0 * a2 + x * 3.0 * a3)
    }

    /// Whether the derivative stays positive across `[lo, hi]`, checked on
    /// `samples` evenly spaced points.
    pub fn is_monotone(&self, lo: f64, hi: f64, samples: usize) -> bool {
        (0..=samples).all(|i| self.derivative(lo + (hi - lo) * i as f64 / samples as f64) > 0.0)
    }
}

/// Weighted least-squares cubic through `(true_fraction, signal)` points.
/// Residuals at fraction 0 or 1 are multiplied by `endpoint_weight` before
/// squaring, the rest by 1.
pub fn fit_calibration(points: &[(f64, f64)], endpoint_weight: f64) -> Result<CalibrationCurve> {
    if points.len() < 5 {
        return Err(Error::InvalidParameter(format!(
            "{} calibration points; at least 5 required",
            points.len()
        )));
    }
    if !(endpoint_weight > 0.0) {
        return Err(Error::InvalidParameter(
            "endpoint weight must be positive".into(),
        ));
    }
    let rows = points.len();
    let mut a = DMatrix::zeros(rows, 4);
    let mut b = DVector::zeros(rows);
    for (r, &(truth, x)) in points.iter().enumerate() {
        let endpoint = truth.abs() < 1e-9 || (truth - 1.0).abs() < 1e-9;
        let w = if endpoint { endpoint_weight } else { 1.0 };
        for p in 0..4 {
            a[(r, p)] = w * x.powi(p as i32);
        }
        b[r] = w * truth;
    }
    let svd = a.svd(true, true);
    let (hi, lo) = (svd.singular_values.max(), svd.singular_values.min());
    if !(lo > 1e-10 * hi) {
        return Err(Error::RankDeficient(format!("condition {:.3e}", hi / lo)));
    }
    let coef = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let mut curve = CalibrationCurve {
        coefficients: [coef[0], coef[1], coef[2], coef[3]],
        endpoint_weight,
        points: points.to_vec(),
        residuals: Vec::new(),
    };
    curve.residuals = points.iter().map(|&(t, x)| curve.eval(x) - t).collect();
    Ok(curve)
}

/// Largest `|curve(signal) − truth|` over both profiles.
pub fn rotation_error(
    profile_0: &[(f64, f64)],
    profile_45: &[(f64, f64)],
    curve: &CalibrationCurve,
) -> f64 {
    profile_0
        .iter()
        .chain(profile_45)
        .map(|&(t, x)| (curve.eval(x) - t).abs())
        .fold(0.0, f64::max)
}

/// Liquid-fraction image on a cubic grid; zero outside the tank mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedImage {
    pub n: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ReconstructedImage {
    pub fn write<W: Write>(&self, w: W, tank_radius: f64, phases: Phases) -> Result<()> {
        write_grid(
            w,
            &GridHeader::new(self.n, tank_radius, phases, "liquid_fraction"),
            &self.values,
        )
    }
}

/// Mean image value over the tank's voxels.
pub fn image_volume_fraction(img: &ReconstructedImage) -> Result<f64> {
    let (sum, count) = img
        .values
        .iter()
        .zip(&img.mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / count as f64)
}

fn check_frame(s: &SensitivityMatrix, frame: &NormalizedFrame) -> Result<()> {
    if s.channels.len() != frame.channels.len()
        || s.channels
            .iter()
            .zip(&frame.channels)
            .any(|(a, b)| (a.transmit, a.receive) != (b.transmit, b.receive))
    {
        return Err(Error::ShapeMismatch(
            "frame channels do not match sensitivity rows".into(),
        ));
    }
    Ok(())
}

/// Which rows take part in a reconstruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSet {
    #[default]
    All,
    NonAdjacent,
}

impl ChannelSet {
    fn admits(&self, ch: &Channel) -> bool {
        match self {
            ChannelSet::All => true,
            ChannelSet::NonAdjacent => ch.kind != ChannelKind::Adjacent,
        }
    }
}

fn active_rows(s: &SensitivityMatrix, frame: &NormalizedFrame, set: ChannelSet) -> Vec<usize> {
    (0..s.rows())
        .filter(|&r| frame.valid[r] && set.admits(&s.channels[r]))
        .collect()
}

/// Linear back projection with row-normalized `|S|` weights, clipped to
/// `[0, 1]`.
pub fn lbp_reconstruct(
    s: &SensitivityMatrix,
    frame: &NormalizedFrame,
    set: ChannelSet,
) -> Result<ReconstructedImage> {
    check_frame(s, frame)?;
    let rows = active_rows(s, frame, set);
    let cols = s.cols();
    let mut num = vec![0.0; cols];
    let mut den = vec![0.0; cols];
    for &r in &rows {
        let row = s.row(r);
        let total: f64 = row
            .iter()
            .zip(&s.mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| x.abs())
            .sum();
        if total == 0.0 {
            continue;
        }
        for i in 0..cols {
            if s.mask[i] {
                let w = row[i].abs() / total;
                num[i] += w * frame.values[r];
                den[i] += w;
            }
        }
    }
    let mut dead = 0;
    let values = (0..cols)
        .map(|i| {
            if !s.mask[i] {
                0.0
            } else if den[i] > 0.0 {
                (num[i] / den[i]).clamp(0.0, 1.0)
            } else {
                dead += 1;
                0.0
            }
        })
        .collect();
    if dead > 0 {
        warn!("{dead} voxels have no sensitivity weight and were set to 0");
    }
    Ok(ReconstructedImage {
        n: s.n,
        values,
        mask: s.mask.clone(),
    })
}

/// Signed sensitivity restricted to active rows and tank voxels, each row
/// scaled to unit sum so a uniformly full image reproduces an all-ones frame.
struct Operator {
    rows: Vec<usize>,
    voxels: Vec<usize>,
    a: DMatrix<f64>,
}

impl Operator {
    fn new(s: &SensitivityMatrix, frame: &NormalizedFrame, set: ChannelSet) -> Result<Self> {
        let voxels: Vec<usize> = (0..s.cols()).filter(|&i| s.mask[i]).collect();
        let rows: Vec<usize> = active_rows(s, frame, set)
            .into_iter()
            .filter(|&r| voxels.iter().map(|&i| s.row(r)[i]).sum::<f64>() != 0.0)
            .collect();
        if rows.is_empty() || voxels.is_empty() {
            return Err(Error::InvalidParameter(
                "no usable rows for reconstruction".into(),
            ));
        }
        let mut a = DMatrix::from_fn(rows.len(), voxels.len(), |r, c| s.row(rows[r])[voxels[c]]);
        for mut row in a.row_iter_mut() {
            let sum: f64 = row.iter().sum();
            row /= sum;
        }
        Ok(Operator { rows, voxels, a })
    }

    /// `‖A‖₂²` by power iteration on `AᵀA`.
    fn norm_squared(&self) -> f64 {
        let mut v = DVector::from_element(self.a.ncols(), 1.0 / (self.a.ncols() as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = self.a.tr_mul(&(&self.a * &v));
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            if (norm - lambda).abs() <= 1e-10 * norm {
                return norm;
            }
            lambda = norm;
        }
        lambda
    }
}

/// Projected Landweber result.
#[derive(Clone, Debug, PartialEq)]
pub struct IterativeResult {
    pub image: ReconstructedImage,
    /// `‖c − Ŝg‖` before the first step and after each step.
    pub residuals: Vec<f64>,
    pub step: f64,
}

/// Admissible Landweber step `1 / ‖Ŝ‖²` for the given rows.
pub fn default_step(
    s: &SensitivityMatrix,
    frame: &NormalizedFrame,
    set: ChannelSet,
) -> Result<f64> {
    let op = Operator::new(s, frame, set)?;
    Ok(1.0 / op.norm_squared())
}

/// `g ← clip(g + step·Ŝᵀ(c − Ŝg), [0, 1])` from the LBP image, with `Ŝ`
/// the row-sum-normalized signed sensitivity. `step = None` uses
/// [`default_step`]. A residual ten times its starting value aborts.
pub fn iterative_reconstruct(
    s: &SensitivityMatrix,
    frame: &NormalizedFrame,
    iterations: usize,
    step: Option<f64>,
    set: ChannelSet,
) -> Result<IterativeResult> {
    if iterations == 0 {
        return Err(Error::InvalidParameter(
            "at least one iteration is required".into(),
        ));
    }
    let op = Operator::new(s, frame, set)?;
    let step = match step {
        Some(x) if x > 0.0 => x,
        Some(x) => {
            return Err(Error::InvalidParameter(format!(
                "step {x} must be positive"
            )))
        }
        None => 1.0 / op.norm_squared(),
    };
    let lbp = lbp_reconstruct(s, frame, set)?;
    let c = DVector::from_iterator(op.rows.len(), op.rows.iter().map(|&r| frame.values[r]));
    let mut g = DVector::from_iterator(op.voxels.len(), op.voxels.iter().map(|&i| lbp.values[i]));
    let mut residual = &c - &op.a * &g;
    let start = residual.norm();
    // Growth below round-off of the frame itself is not divergence.
    let limit = 10.0 * start.max(1e-10 * c.norm().max(1.0));
    let mut history = vec![start];
    for k in 0..iterations {
        g += step * op.a.tr_mul(&residual);
        g.apply(|x| *x = x.clamp(0.0, 1.0));
        residual = &c - &op.a * &g;
        let r = residual.norm();
        history.push(r);
        if !r.is_finite() || r > limit {
            return Err(Error::Diverged {
                step: k + 1,
                residual: r,
                history,
            });
        }
    }
    let mut values = vec![0.0; s.cols()];
    for (k, &i) in op.voxels.iter().enumerate() {
        values[i] = g[k];
    }
    Ok(IterativeResult {
        image: ReconstructedImage {
            n: s.n,
            values,
            mask: s.mask.clone(),
        },
        residuals: history,
        step,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ecvs,
    Lbp,
    Iterative,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ecvs, Method::Lbp, Method::Iterative];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ecvs => "ecvs",
            Method::Lbp => "lbp",
            Method::Iterative => "iterative",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Settings for turning frames into raw estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeSettings {
    pub iterations: usize,
    pub step: Option<f64>,
    pub lbp_channels: ChannelSet,
    pub iterative_channels: ChannelSet,
    pub endpoint_weight: f64,
}

impl Default for GaugeSettings {
    fn default() -> Self {
        GaugeSettings {
            iterations: 100,
            step: None,
            lbp_channels: ChannelSet::All,
            iterative_channels: ChannelSet::All,
            endpoint_weight: DEFAULT_ENDPOINT_WEIGHT,
        }
    }
}

/// Uncalibrated estimate of one method for one frame.
pub fn raw_estimate(
    method: Method,
    frame: &NormalizedFrame,
    s: &SensitivityMatrix,
    settings: &GaugeSettings,
) -> Result<f64> {
    match method {
        Method::Ecvs => ecvs_average(frame),
        Method::Lbp => image_volume_fraction(&lbp_reconstruct(s, frame, settings.lbp_channels)?),
        Method::Iterative => image_volume_fraction(
            &iterative_reconstruct(
                s,
                frame,
                settings.iterations,
                settings.step,
                settings.iterative_channels,
            )?
            .image,
        ),
    }
}

/// One gauged frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaugePoint {
    pub true_fraction: f64,
    pub signal: f64,
    pub estimate: f64,
    pub tilt: f64,
}

/// Accuracy of one method on one sensor over a set of fill profiles.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaugeReport {
    pub sensor: String,
    pub method: Method,
    pub calibration: CalibrationCurve,
    pub points: Vec<GaugePoint>,
    pub max_error: f64,
    pub mean_error: f64,
    /// Largest `|signal − truth|` before calibration.
    pub raw_max_error: f64,
}

impl GaugeReport {
    /// Calibrates on the union of all profiles and measures the error left
    /// by the differences between them. Profiles are `(tilt_degrees,
    /// [(true_fraction, signal)])`.
    pub fn from_signals(
        sensor: &str,
        method: Method,
        profiles: &[(f64, Vec<(f64, f64)>)],
        endpoint_weight: f64,
    ) -> Result<GaugeReport> {
        let all: Vec<(f64, f64)> = profiles
            .iter()
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let calibration = fit_calibration(&all, endpoint_weight)?;
        let points: Vec<GaugePoint> = profiles
            .iter()
            .flat_map(|(tilt, p)| {
                p.iter().map(|&(t, x)| GaugePoint {
                    true_fraction: t,
                    signal: x,
                    estimate: calibration.eval(x),
                    tilt: *tilt,
                })
            })
            .collect();
        let errors: Vec<f64> = points
            .iter()
            .map(|p| (p.estimate - p.true_fraction).abs())
            .collect();
        Ok(GaugeReport {
            sensor: sensor.to_string(),
            method,
            max_error: errors.iter().copied().fold(0.0, f64::max),
            mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
            raw_max_error: points
                .iter()
                .map(|p| (p.signal - p.true_fraction).abs())
                .fold(0.0, f64::max),
            calibration,
            points,
        })
    }
}

/// Gauges every frame of every profile with each method. Profiles are
/// `(tilt_degrees, [(true_fraction, frame)])`.
pub fn accuracy_table(
    sensor: &str,
    s: &SensitivityMatrix,
    profiles: &[(f64, Vec<(f64, NormalizedFrame)>)],
    methods: &[Method],
    settings: &GaugeSettings,
) -> Result<Vec<GaugeReport>> {
    methods
        .iter()
        .map(|&m| {
            let signals = profiles
                .iter()
                .map(|(tilt, frames)| {
                    let sig = frames
                        .iter()
                        .map(|(t, f)| raw_estimate(m, f, s, settings).map(|x| (*t, x)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((*tilt, sig))
                })
                .collect::<Result<Vec<_>>>()?;
            GaugeReport::from_signals(sensor, m, &signals, settings.endpoint_weight)
        })
        .collect()
}

/// Per-frame rows `(true_fraction, estimate, method, sensor, tilt)` then a
/// summary block with max and mean error per sensor and method.
pub fn write_gauge_csv<W: Write>(w: W, reports: &[GaugeReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    out.write_record(["true_fraction", "estimate", "method", "sensor", "tilt"])?;
    for r in reports {
        for p in &r.points {
            out.write_record([
                p.true_fraction.to_string(),
                p.estimate.to_string(),
                r.method.to_string(),
                r.sensor.clone(),
                p.tilt.to_string(),
            ])?;
        }
    }
    out.write_record([
        "sensor",
        "method",
        "max_error",
        "mean_error",
        "raw_max_error",
    ])?;
    for r in reports {
        out.write_record([
            r.sensor.clone(),
            r.method.to_string(),
            r.max_error.to_string(),
            r.mean_error.to_string(),
            r.raw_max_error.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// ECVS readings along a ball path, each zeroed to the first position and
/// scaled by the stratified dynamic range.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallSweep {
    pub readings: Vec<f64>,
    /// Mean normalized reading per channel kind at each position.
    pub by_kind: BTreeMap<ChannelKind, Vec<f64>>,
    /// `max − min` of the readings.
    pub drift: f64,
}

pub fn ball_sweep(
    frames: &[CapacitanceSet],
    empty: &CapacitanceSet,
    full: &CapacitanceSet,
) -> Result<BallSweep> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidParameter("ball sweep has no frames".into()))?;
    let normalized = frames
        .iter()
        .map(|f| normalize_against(f, first, empty, full))
        .collect::<Result<Vec<_>>>()?;
    let readings = normalized
        .iter()
        .map(ecvs_average)
        .collect::<Result<Vec<_>>>()?;
    let mut by_kind = BTreeMap::new();
    for kind in ChannelKind::ALL {
        if !first.channels.iter().any(|c| c.kind == kind) {
            continue;
        }
        let series = normalized
            .iter()
            .map(|f| {
                let v: Vec<f64> = f
                    .channels
                    .iter()
                    .zip(&f.values)
                    .zip(&f.valid)
                    .filter(|((c, _), &ok)| ok && c.kind == kind)
                    .map(|((_, &v), _)| v)
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect();
        by_kind.insert(kind, series);
    }
    let hi = readings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = readings.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BallSweep {
        readings,
        by_kind,
        drift: hi - lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{tank_mask, VoxelDomain};
    use crate::geometry::{generate_layout, Solid};
    use crate::sensitivity::compute_sensitivity;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn set(layout_solid: Solid, values: Vec<f64>) -> CapacitanceSet {
        let layout = generate_layout(layout_solid, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
        CapacitanceSet {
            channels: layout.channels,
            values,
            residual: 0.0,
            reciprocity_error: 0.0,
            scenario: String::new(),
        }
    }

    fn octa_sensitivity() -> &'static SensitivityMatrix {
        static S: OnceLock<SensitivityMatrix> = OnceLock::new();
        S.get_or_init(|| {
            let layout =
                generate_layout(Solid::Octahedron, 1.0, 0.05, UnitQuaternion::identity()).unwrap();
            let empty = VoxelDomain::empty(12, 1.0, Phases::default()).unwrap();
            compute_sensitivity(&layout, &empty, 1e-9).unwrap()
        })
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let empty = set(Solid::Cube, (1..=15).map(|x| x as f64).collect());
        let full = set(Solid::Cube, (1..=15).map(|x| 2.5 * x as f64).collect());
        let mid = set(Solid::Cube, (1..=15).map(|x| 1.75 * x as f64).collect());
        assert!(normalize_frame(&empty, &empty, &full)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        assert!(normalize_frame(&full, &empty, &full)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 1.0));
        assert!(normalize_frame(&mid, &empty, &full)
            .unwrap()
            .values
            .iter()
            .all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_range_channel_is_excluded() {
        let empty = set(Solid::Cube, vec![1.0; 15]);
        let mut full = set(Solid::Cube, vec![2.0; 15]);
        full.values[0] = 1.0;
        let f = normalize_frame(&full, &empty, &full).unwrap();
        assert!(!f.valid[0]);
        assert_eq!(ecvs_average(&f).unwrap(), 1.0);
    }

    #[test]
    fn ecvs_average_uses_non_adjacent_channels() {
        let layout =
            generate_layout(Solid::Dodecahedron, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
        let mut frame = NormalizedFrame::constant(&layout.channels, 0.0);
        assert_eq!(ecvs_average(&frame).unwrap(), 0.0);
        for (v, ch) in frame.values.iter_mut().zip(&layout.channels) {
            *v = if ch.kind == ChannelKind::Adjacent {
                100.0
            } else {
                1.0
            };
        }
        assert_eq!(ecvs_average(&frame).unwrap(), 1.0);
        let tetra =
            generate_layout(Solid::Tetrahedron, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
        assert!(matches!(
            ecvs_average(&NormalizedFrame::constant(&tetra.channels, 0.5)),
            Err(Error::UnsupportedLayout(_))
        ));
    }

    #[test]
    fn calibration_reproduces_exact_models() {
        let linear: Vec<(f64, f64)> = (0..=6)
            .map(|i| i as f64 / 6.0)
            .map(|x| (0.2 + 0.7 * x, x))
            .collect();
        let c = fit_calibration(&linear, 100.0).unwrap();
        assert!((c.coefficients[0] - 0.2).abs() < 1e-9 && (c.coefficients[1] - 0.7).abs() < 1e-9);
        assert!(c.coefficients[2].abs() < 1e-9 && c.coefficients[3].abs() < 1e-9);
        let id: Vec<(f64, f64)> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&x| (x, x))
            .collect();
        let c = fit_calibration(&id, 100.0).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert!((c.eval(x) - x).abs() < 1e-12);
        }
        assert!(rotation_error(&id, &id, &c) < 1e-12);
        assert!(fit_calibration(&id[..4], 100.0).is_err());
        let flat: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 / 5.0, 0.5)).collect();
        assert!(matches!(
            fit_calibration(&flat, 100.0),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn endpoint_weight_pins_curve_ends() {
        let pts: Vec<(f64, f64)> = (0..=10)
            .map(|i| i as f64 / 10.0)
            .map(|t| (t, t + 0.08 * (7.0 * t).sin() * t * (1.0 - t)))
            .collect();
        let c = fit_calibration(&pts, 100.0).unwrap();
        assert!(c.eval(0.0).abs() < 1e-3 && (c.eval(1.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lbp_of_constant_frames() {
        let s = octa_sensitivity();
        let zero = lbp_reconstruct(
            s,
            &NormalizedFrame::constant(&s.channels, 0.0),
            ChannelSet::All,
        )
        .unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let ones = lbp_reconstruct(
            s,
            &NormalizedFrame::constant(&s.channels, 1.0),
            ChannelSet::All,
        )
        .unwrap();
        for (v, m) in ones.values.iter().zip(&ones.mask) {
            assert_eq!(*v, if *m { 1.0 } else { 0.0 });
        }
        assert!((image_volume_fraction(&ones).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iterative_zero_frame_is_fixed_point() {
        let s = octa_sensitivity();
        let out = iterative_reconstruct(
            s,
            &NormalizedFrame::constant(&s.channels, 0.0),
            5,
            None,
            ChannelSet::All,
        )
        .unwrap();
        assert!(out.image.values.iter().all(|&v| v == 0.0));
        assert!(out.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn landweber_residual_decreases_on_consistent_data() {
        let s = octa_sensitivity();
        // Forward-project a known image through the normalized operator.
        let truth: Vec<f64> = (0..s.cols())
            .map(|i| {
                if s.mask[i] && (i / (s.n * s.n)) < s.n / 3 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let values = (0..s.rows())
            .map(|r| {
                let row = s.row(r);
                let sum: f64 = (0..s.cols()).filter(|&i| s.mask[i]).map(|i| row[i]).sum();
                (0..s.cols()).map(|i| row[i] * truth[i]).sum::<f64>() / sum
            })
            .collect();
        let frame = NormalizedFrame {
            channels: s.channels.clone(),
            values,
            valid: vec![true; s.rows()],
        };
        let out = iterative_reconstruct(s, &frame, 40, None, ChannelSet::All).unwrap();
        for w in out.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", out.residuals);
        }
        assert!(out.residuals.last().unwrap() < &out.residuals[0]);
    }

    #[test]
    fn oversized_step_diverges() {
        let s = octa_sensitivity();
        let mut frame = NormalizedFrame::constant(&s.channels, 0.3);
        frame.values[0] = 0.9;
        let step = default_step(s, &frame, ChannelSet::All).unwrap();
        match iterative_reconstruct(s, &frame, 200, Some(500.0 * step), ChannelSet::All) {
            Err(Error::Diverged { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn image_fraction_of_half_image() {
        let n = 20;
        let mask = tank_mask(n);
        let values: Vec<f64> = (0..n * n * n)
            .map(|v| if mask[v] && v % n < n / 2 { 1.0 } else { 0.0 })
            .collect();
        let img = ReconstructedImage { n, values, mask };
        assert!((image_volume_fraction(&img).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn perfect_signals_have_zero_error() {
        let p: Vec<(f64, f64)> = (0..=10).map(|i| i as f64 / 10.0).map(|x| (x, x)).collect();
        let r = GaugeReport::from_signals("x", Method::Ecvs, &[(0.0, p.clone()), (45.0, p)], 100.0)
            .unwrap();
        assert!(r.max_error < 1e-12 && r.mean_error < 1e-12);
    }

    proptest! {
        #[test]
        fn normalization_is_affine(scale in 0.1f64..10.0, t in 0.0f64..1.0) {
            let empty = set(Solid::Octahedron, (1..=28).map(|x| x as f64 * 0.1).collect());
            let full = set(Solid::Octahedron, empty.values.iter().map(|v| v * (1.0 + scale)).collect());
            let c = set(Solid::Octahedron, empty.values.iter().zip(&full.values).map(|(e, f)| e + t * (f - e)).collect());
            for v in normalize_frame(&c, &empty, &full).unwrap().values {
                prop_assert!((v - t).abs() < 1e-12);
            }
            prop_assert!(normalize_frame(&full, &empty, &full).unwrap().values.iter().all(|&v| v == 1.0));
            prop_assert!(normalize_frame(&empty, &empty, &full).unwrap().values.iter().all(|&v| v == 0.0));
        }

        #[test]
        fn calibration_endpoints(noise in prop::collection::vec(-0.05f64..0.05, 9)) {
            let mut pts = vec![(0.0, 0.0), (1.0, 1.0)];
            for (i, e) in noise.iter().enumerate() {
                let t = (i + 1) as f64 / 10.0;
                pts.push((t, t + e));
            }
            let c = fit_calibration(&pts, 100.0).unwrap();
            prop_assert!(c.eval(0.0).abs() < 1e-2);
            prop_assert!((c.eval(1.0) - 1.0).abs() < 1e-2);
        }
    }
}
