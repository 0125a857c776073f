//! Sensor-quality figures: dynamic range, spatial sensitivity quotient,
//! signal-to-noise ratios and the singularity distribution of stratified
//! fills.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use nalgebra::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::cap_fraction;
use crate::error::{Error, Result};
use crate::geometry::{singularity_points, Channel, ChannelKind, SensorLayout, Vec3};
use crate::sensitivity::SensitivityMatrix;
use crate::solver::CapacitanceSet;

/// `C_full − C_empty` per channel.
pub fn dynamic_range(full: &CapacitanceSet, empty: &CapacitanceSet) -> Result<Vec<f64>> {
    if !full.same_channels(empty) {
        return Err(Error::ShapeMismatch(
            "full and empty sets have different channels".into(),
        ));
    }
    Ok(full
        .values
        .iter()
        .zip(&empty.values)
        .map(|(f, e)| f - e)
        .collect())
}

/// Spatial sensitivity quotient `Σ|s| / (max|s| − min|s|)` of one row,
/// restricted to the voxels that matter. A row with constant magnitude
/// yields `+∞`.
pub fn ssq(row: &[f64]) -> f64 {
    let (mut sum, mut hi, mut lo) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
    for x in row.iter().map(|x| x.abs()) {
        sum += x;
        hi = hi.max(x);
        lo = lo.min(x);
    }
    if !(hi > lo) {
        warn!("sensitivity row has constant magnitude; quotient is unbounded");
        return f64::INFINITY;
    }
    sum / (hi - lo)
}

/// Quotient of every row over the tank's voxels.
pub fn ssq_rows(s: &SensitivityMatrix) -> Vec<f64> {
    (0..s.rows()).map(|r| ssq(&s.masked_row(r))).collect()
}

/// `mean / std` per channel over repeated full-tank readings, with the
/// sample standard deviation. Noise-free channels yield `+∞`.
pub fn snr(samples: &[CapacitanceSet]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(
            "SNR needs at least two samples".into(),
        ));
    }
    if samples.iter().any(|s| !s.same_channels(&samples[0])) {
        return Err(Error::ShapeMismatch(
            "samples have different channels".into(),
        ));
    }
    let k = samples.len() as f64;
    Ok((0..samples[0].len())
        .map(|c| {
            let mean = samples.iter().map(|s| s.values[c]).sum::<f64>() / k;
            let var = samples
                .iter()
                .map(|s| (s.values[c] - mean).powi(2))
                .sum::<f64>()
                / (k - 1.0);
            if var == 0.0 {
                f64::INFINITY
            } else {
                mean / var.sqrt()
            }
        })
        .collect())
}

/// `DR · σ / noise` per channel.
pub fn ssnr(dynamic_range: &[f64], ssq: &[f64], noise_std: &[f64]) -> Result<Vec<f64>> {
    if dynamic_range.len() != ssq.len() || ssq.len() != noise_std.len() {
        return Err(Error::ShapeMismatch(
            "per-channel inputs differ in length".into(),
        ));
    }
    if let Some(s) = noise_std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "noise std {s} must be positive"
        )));
    }
    Ok(dynamic_range
        .iter()
        .zip(ssq)
        .zip(noise_std)
        .map(|((d, q), s)| d * q / s)
        .collect())
}

/// Additive white measurement noise. Each channel's standard deviation is
/// `relative · C_empty + absolute`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub relative: f64,
    #[serde(default)]
    pub absolute: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            relative: 1e-4,
            absolute: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn std(&self, empty: &CapacitanceSet) -> Vec<f64> {
        empty
            .values
            .iter()
            .map(|c| self.relative * c.abs() + self.absolute)
            .collect()
    }

    /// `count` noisy copies of `base`, reproducible for a given seed.
    pub fn samples(
        &self,
        base: &CapacitanceSet,
        std: &[f64],
        count: usize,
        seed: u64,
    ) -> Result<Vec<CapacitanceSet>> {
        if std.len() != base.len() {
            return Err(Error::ShapeMismatch("noise std per channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normals = std
            .iter()
            .map(|&s| Normal::new(0.0, s).map_err(|e| Error::InvalidParameter(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..count)
            .map(|_| {
                let mut s = base.clone();
                for (v, d) in s.values.iter_mut().zip(&normals) {
                    *v += d.sample(&mut rng);
                }
                s
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub channel: Channel,
    pub dynamic_range: f64,
    pub ssq: f64,
    pub snr: f64,
    pub ssnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KindSummary {
    pub count: usize,
    pub mean_dynamic_range: f64,
    pub mean_ssq: f64,
    pub total_ssq: f64,
    pub mean_snr: f64,
    pub mean_ssnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub channels: Vec<ChannelMetrics>,
    pub by_kind: BTreeMap<ChannelKind, KindSummary>,
    pub overall: KindSummary,
}

fn summarize<'a>(rows: impl Iterator<Item = &'a ChannelMetrics>) -> KindSummary {
    let rows: Vec<_> = rows.collect();
    let k = rows.len().max(1) as f64;
    let mean = |f: fn(&ChannelMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
    KindSummary {
        count: rows.len(),
        mean_dynamic_range: mean(|r| r.dynamic_range),
        mean_ssq: mean(|r| r.ssq),
        total_ssq: rows.iter().map(|r| r.ssq).sum(),
        mean_snr: mean(|r| r.snr),
        mean_ssnr: mean(|r| r.ssnr),
    }
}

impl MetricsReport {
    /// Combines per-channel figures. SNR comes from `samples` noisy full-tank
    /// readings drawn with `noise` and `seed`.
    pub fn compute(
        empty: &CapacitanceSet,
        full: &CapacitanceSet,
        s: &SensitivityMatrix,
        noise: &NoiseModel,
        samples: usize,
        seed: u64,
    ) -> Result<MetricsReport> {
        if s.channels.len() != empty.len() {
            return Err(Error::ShapeMismatch(
                "sensitivity rows and channels differ".into(),
            ));
        }
        let dr = dynamic_range(full, empty)?;
        let sigma = ssq_rows(s);
        let std = noise.std(empty);
        let snr = snr(&noise.samples(full, &std, samples, seed)?)?;
        let ssnr = ssnr(&dr, &sigma, &std)?;
        let channels: Vec<ChannelMetrics> = (0..dr.len())
            .map(|i| ChannelMetrics {
                channel: empty.channels[i],
                dynamic_range: dr[i],
                ssq: sigma[i],
                snr: snr[i],
                ssnr: ssnr[i],
            })
            .collect();
        let by_kind = ChannelKind::ALL
            .iter()
            .filter(|k| channels.iter().any(|c| c.channel.kind == **k))
            .map(|&k| {
                (
                    k,
                    summarize(channels.iter().filter(|c| c.channel.kind == k)),
                )
            })
            .collect();
        let overall = summarize(channels.iter());
        Ok(MetricsReport {
            channels,
            by_kind,
            overall,
        })
    }

    /// Per-channel table followed by one aggregate row per kind and one for
    /// the whole sensor (`transmit`/`receive` empty on aggregate rows).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "transmit",
            "receive",
            "kind",
            "dynamic_range",
            "ssq",
            "snr",
            "ssnr",
            "ssq_total",
        ])?;
        for c in &self.channels {
            out.write_record([
                c.channel.transmit.to_string(),
                c.channel.receive.to_string(),
                c.channel.kind.to_string(),
                c.dynamic_range.to_string(),
                c.ssq.to_string(),
                c.snr.to_string(),
                c.ssnr.to_string(),
                String::new(),
            ])?;
        }
        let rows = self
            .by_kind
            .iter()
            .map(|(k, s)| (format!("mean:{k}"), s))
            .chain(std::iter::once(("mean:all".to_string(), &self.overall)));
        for (label, s) in rows {
            out.write_record([
                String::new(),
                String::new(),
                label,
                s.mean_dynamic_range.to_string(),
                s.mean_ssq.to_string(),
                s.mean_snr.to_string(),
                s.mean_ssnr.to_string(),
                s.total_ssq.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cumulative share of singularity points submerged as a stratified fill
/// rises, sampled at evenly spaced volume fractions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularityCurve {
    /// Volume fraction at which the liquid plane reaches each point, sorted.
    pub crossings: Vec<f64>,
    pub points: Vec<(f64, f64)>,
}

impl SingularityCurve {
    /// Exact cumulative share at any fill fraction.
    pub fn cumulative_at(&self, fraction: f64) -> f64 {
        if self.crossings.is_empty() {
            return 1.0;
        }
        let hit = self
            .crossings
            .iter()
            .filter(|&&c| c <= fraction + 1e-12)
            .count();
        hit as f64 / self.crossings.len() as f64
    }

    /// Largest share crossed within any window `[f, f + width]`.
    pub fn max_jump(&self, width: f64) -> f64 {
        let k = self.crossings.len() as f64;
        self.crossings
            .iter()
            .map(|&lo| {
                self.crossings
                    .iter()
                    .filter(|&&c| c >= lo && c <= lo + width + 1e-12)
                    .count() as f64
                    / k
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fill_fraction", "cumulative_fraction"])?;
        for (f, c) in &self.points {
            out.write_record([f.to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Curve for the layout with gravity tilted by `tilt` from `−z`.
pub fn singularity_curve(
    layout: &SensorLayout,
    tilt: &UnitQuaternion<f64>,
    steps: usize,
) -> Result<SingularityCurve> {
    if steps < 10 {
        return Err(Error::InvalidParameter(format!(
            "{steps} steps; at least 10 required"
        )));
    }
    let up = tilt * Vec3::z();
    let mut crossings: Vec<f64> = singularity_points(layout)
        .iter()
        .map(|p| cap_fraction(p.dot(&up)))
        .collect();
    crossings.sort_by(f64::total_cmp);
    let mut curve = SingularityCurve {
        crossings,
        points: Vec::new(),
    };
    curve.points = (0..=steps)
        .map(|i| {
            let f = i as f64 / steps as f64;
            (f, curve.cumulative_at(f))
        })
        .collect();
    Ok(curve)
}
