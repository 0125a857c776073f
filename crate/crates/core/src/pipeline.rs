//! Config-driven experiment pipelines with a content-addressed solve cache.
//! Each `cmd_*` function writes CSV (and grid) artifacts into the output
//! directory and returns the paths it wrote.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use log::info;
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::content_hash;
use crate::domain::{
    ball_path, fill_sweep, rasterize, tilt_about_x, volume_fraction_of, FillKind, FillScenario,
    Phases, VoxelDomain,
};
use crate::error::{Error, Result};
use crate::gauging::{
    accuracy_table, ball_sweep, iterative_reconstruct, lbp_reconstruct, normalize_frame,
    write_gauge_csv, BallSweep, GaugeReport, GaugeSettings, Method, NormalizedFrame,
};
use crate::geometry::{
    axis_aligned_orientation, generate_layout, rotational_order, vertex_up_orientation,
    SensorLayout, Solid,
};
use crate::metrics::{singularity_curve, MetricsReport, NoiseModel};
use crate::sensitivity::{compute_sensitivity, downsample_sensitivity, SensitivityMatrix};
use crate::solver::{CapacitanceSet, ForwardModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// How a sensor's solid is turned relative to the canonical face-up pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    FaceUp,
    VertexUp,
    AxisAligned,
    Quaternion { w: f64, x: f64, y: f64, z: f64 },
}

impl Orientation {
    pub fn rotation(&self, solid: Solid) -> UnitQuaternion<f64> {
        match *self {
            Orientation::FaceUp => UnitQuaternion::identity(),
            Orientation::VertexUp => vertex_up_orientation(solid),
            Orientation::AxisAligned => axis_aligned_orientation(solid),
            Orientation::Quaternion { w, x, y, z } => {
                UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub solid: Solid,
    /// Meters.
    pub tank_radius: f64,
    /// Meters of arc between neighbouring plates.
    pub gap_width: f64,
    pub orientation: Orientation,
}

impl SensorSpec {
    pub fn layout(&self) -> Result<SensorLayout> {
        generate_layout(
            self.solid,
            self.tank_radius,
            self.gap_width,
            self.orientation.rotation(self.solid),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Voxels per edge of the solve grid.
    pub solve: usize,
    /// Voxels per edge of the reconstruction grid.
    pub image: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    /// Meters.
    pub radius: f64,
    pub positions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Frames per stratified sweep, empty and full included.
    pub steps: usize,
    /// Gravity tilts in degrees about +x.
    pub tilts: Vec<f64>,
    pub ball: BallSpec,
    /// Points on each singularity curve.
    pub singularity_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub model: NoiseModel,
    /// Noisy full-tank readings per channel for the SNR estimate.
    pub samples: usize,
}

/// Complete description of an experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sensors: Vec<SensorSpec>,
    pub grid: GridSpec,
    pub phases: Phases,
    pub sweeps: SweepSpec,
    pub solver: SolverSpec,
    pub noise: NoiseSpec,
    pub gauge: GaugeSettings,
    /// Extra scenario solved by `simulate`.
    #[serde(default)]
    pub scenario: Option<FillScenario>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

const INCH: f64 = 0.0254;

impl Default for ExperimentConfig {
    /// Dodecahedron and octahedron on a 9.5 inch tank with quarter-inch gaps.
    fn default() -> Self {
        let sensor = |solid: Solid, orientation| SensorSpec {
            name: solid.name().to_string(),
            solid,
            tank_radius: 4.75 * INCH,
            gap_width: 0.25 * INCH,
            orientation,
        };
        ExperimentConfig {
            sensors: vec![
                sensor(Solid::Octahedron, Orientation::VertexUp),
                sensor(Solid::Dodecahedron, Orientation::FaceUp),
            ],
            grid: GridSpec {
                solve: 48,
                image: 20,
            },
            phases: Phases::default(),
            sweeps: SweepSpec {
                steps: 11,
                tilts: vec![0.0, 45.0],
                ball: BallSpec {
                    radius: 1.97 * INCH,
                    positions: 9,
                },
                singularity_steps: 100,
            },
            solver: SolverSpec {
                tol: crate::solver::DEFAULT_TOL,
                max_iter: crate::solver::DEFAULT_MAX_ITER,
            },
            noise: NoiseSpec {
                model: NoiseModel::default(),
                samples: 1000,
            },
            gauge: GaugeSettings::default(),
            scenario: None,
            seed: 0,
            out_dir: PathBuf::from("ecvs-out"),
            cache_dir: Some(PathBuf::from(".ecvs-cache")),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes the config as run to `out_dir/config.json`.
    pub fn save_resolved(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join("config.json");
        fs::write(&path, self.to_json()?)?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sensors.is_empty() {
            return bad("at least one sensor is required".into());
        }
        for s in &self.sensors {
            if !(s.tank_radius > 0.0) || !(s.gap_width >= 0.0) {
                return bad(format!(
                    "sensor '{}': radius must be positive and gap nonnegative",
                    s.name
                ));
            }
            s.layout()
                .map_err(|e| Error::Config(format!("sensor '{}': {e}", s.name)))?;
        }
        if self.grid.solve < 4 || self.grid.image < 2 || self.grid.image > self.grid.solve {
            return bad(format!("grid sizes {:?} are invalid", self.grid));
        }
        if !(self.phases.eps_gas > 0.0 && self.phases.eps_liquid > 0.0) {
            return bad("permittivities must be positive".into());
        }
        if self.sweeps.steps < 5
            || self.sweeps.singularity_steps < 10
            || self.sweeps.ball.positions < 2
        {
            return bad(
                "sweeps need at least 5 fill steps, 10 curve steps and 2 ball positions".into(),
            );
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) || self.solver.max_iter == 0 {
            return bad("solver tolerance must be in (0, 1) with a positive iteration cap".into());
        }
        if self.noise.samples < 2
            || !(self.noise.model.relative >= 0.0 && self.noise.model.absolute >= 0.0)
        {
            return bad("noise needs nonnegative levels and at least 2 samples".into());
        }
        if self.gauge.iterations == 0 || !(self.gauge.endpoint_weight > 0.0) {
            return bad("gauge needs at least one iteration and a positive endpoint weight".into());
        }
        Ok(())
    }

    /// Hash of everything that affects results (output and cache locations
    /// excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.cache_dir = None;
        content_hash(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    fn header(&self) -> String {
        format!("# ecvs {VERSION}\n# config {}\n", self.hash())
    }
}

/// Digest of a domain's grid, phases and liquid map.
pub fn domain_hash(d: &VoxelDomain) -> String {
    let mut bytes = Vec::with_capacity(d.liquid.len() * 8 + 64);
    bytes.extend_from_slice(&(d.n as u64).to_le_bytes());
    for x in [d.tank_radius, d.phases.eps_gas, d.phases.eps_liquid] {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    for x in &d.liquid {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    content_hash(&bytes)
}

/// Directory of solved capacitance sets and sensitivity matrices keyed by
/// `sha256(layout hash, domain hash, tol)`.
#[derive(Clone, Debug)]
pub struct SolveCache {
    pub dir: PathBuf,
}

impl SolveCache {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(SolveCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn key(layout: &SensorLayout, domain: &VoxelDomain, tol: f64) -> String {
        let text = format!(
            "{}:{}:{:e}",
            layout.content_hash(),
            domain_hash(domain),
            tol
        );
        content_hash(text.as_bytes())
    }

    fn path(&self, key: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{key}.{ext}"))
    }

    pub fn get(&self, key: &str) -> Option<CapacitanceSet> {
        let text = fs::read_to_string(self.path(key, "json")).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, set: &CapacitanceSet) -> Result<()> {
        // Write then rename so an interrupted run never leaves a torn entry.
        let tmp = self.path(key, "json.tmp");
        fs::write(&tmp, serde_json::to_string(set)?)?;
        fs::rename(tmp, self.path(key, "json"))?;
        Ok(())
    }

    pub fn get_matrix(&self, key: &str) -> Option<SensitivityMatrix> {
        let file = fs::File::open(self.path(key, "sens")).ok()?;
        SensitivityMatrix::read(std::io::BufReader::new(file)).ok()
    }

    pub fn put_matrix(&self, key: &str, s: &SensitivityMatrix) -> Result<()> {
        let tmp = self.path(key, "sens.tmp");
        s.write(BufWriter::new(fs::File::create(&tmp)?))?;
        fs::rename(tmp, self.path(key, "sens"))?;
        Ok(())
    }
}

/// Solves scenarios for one sensor, consulting the cache first.
pub struct Simulator {
    pub spec: SensorSpec,
    pub layout: SensorLayout,
    pub n: usize,
    pub phases: Phases,
    pub solver: SolverSpec,
    pub cache: Option<SolveCache>,
    /// Solves actually run (cache misses).
    pub solves: AtomicUsize,
}

impl Simulator {
    pub fn new(spec: &SensorSpec, config: &ExperimentConfig) -> Result<Self> {
        Ok(Simulator {
            layout: spec.layout()?,
            spec: spec.clone(),
            n: config.grid.solve,
            phases: config.phases,
            solver: config.solver,
            cache: config
                .cache_dir
                .as_deref()
                .map(SolveCache::new)
                .transpose()?,
            solves: AtomicUsize::new(0),
        })
    }

    pub fn domain(&self, scenario: &FillScenario) -> Result<VoxelDomain> {
        rasterize(scenario, self.n, self.spec.tank_radius, self.phases)
    }

    pub fn capacitance(&self, domain: &VoxelDomain, label: &str) -> Result<CapacitanceSet> {
        let key = SolveCache::key(&self.layout, domain, self.solver.tol);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(CapacitanceSet {
                scenario: label.to_string(),
                ..hit
            });
        }
        let model = ForwardModel::for_domain(domain, &self.layout)?;
        let fields = model.solve_all(self.solver.tol, self.solver.max_iter)?;
        self.solves.fetch_add(fields.len(), Ordering::Relaxed);
        let set = CapacitanceSet::from_fields(&model, &self.layout, &fields, label);
        if let Some(c) = &self.cache {
            c.put(&key, &set)?;
        }
        Ok(set)
    }

    pub fn scenario(&self, scenario: &FillScenario, label: &str) -> Result<CapacitanceSet> {
        self.capacitance(&self.domain(scenario)?, label)
    }

    pub fn empty(&self) -> Result<CapacitanceSet> {
        self.scenario(&FillScenario::Uniform { fraction: 0.0 }, "empty")
    }

    pub fn full(&self) -> Result<CapacitanceSet> {
        self.scenario(&FillScenario::Uniform { fraction: 1.0 }, "full")
    }

    /// Sensitivity about the empty tank on the solve grid.
    pub fn sensitivity(&self) -> Result<SensitivityMatrix> {
        let empty = self.domain(&FillScenario::Uniform { fraction: 0.0 })?;
        let key = format!(
            "sens-{}",
            SolveCache::key(&self.layout, &empty, self.solver.tol)
        );
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get_matrix(&key)) {
            return Ok(hit);
        }
        let s = compute_sensitivity(&self.layout, &empty, self.solver.tol)?;
        self.solves
            .fetch_add(self.layout.plate_count(), Ordering::Relaxed);
        if let Some(c) = &self.cache {
            c.put_matrix(&key, &s)?;
        }
        Ok(s)
    }

    /// Stratified sweep at `tilt` degrees as `(true_fraction, set)` pairs.
    pub fn stratified_sweep(&self, steps: usize, tilt: f64) -> Result<Vec<(f64, CapacitanceSet)>> {
        fill_sweep(
            FillKind::Stratified,
            steps,
            &tilt_about_x(tilt),
            self.n,
            self.spec.tank_radius,
            self.phases,
        )?
        .into_iter()
        .map(|(f, d)| {
            let truth = volume_fraction_of(&d)?;
            self.capacitance(&d, &format!("stratified tilt={tilt} fill={f:.4}"))
                .map(|c| (truth, c))
        })
        .collect()
    }

    /// Ball moved along the vertical axis from top to bottom.
    pub fn ball_frames(&self, ball: &BallSpec) -> Result<Vec<CapacitanceSet>> {
        ball_path(
            ball.radius,
            ball.positions,
            self.spec.tank_radius,
            &Vector3::z(),
        )?
        .iter()
        .enumerate()
        .map(|(i, sc)| self.scenario(sc, &format!("ball position {i}")))
        .collect()
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes the comment header followed by CSV produced by `body`.
fn write_csv_file(
    path: &Path,
    config: &ExperimentConfig,
    body: impl FnOnce(&mut Vec<u8>) -> Result<()>,
) -> Result<()> {
    let mut buf = config.header().into_bytes();
    body(&mut buf)?;
    let mut f = create(path)?;
    f.write_all(&buf)?;
    f.flush()?;
    Ok(())
}

pub fn write_capacitance_csv<W: Write>(w: W, set: &CapacitanceSet) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["transmit", "receive", "kind", "capacitance", "residual"])?;
    for (ch, v) in set.channels.iter().zip(&set.values) {
        out.write_record([
            ch.transmit.to_string(),
            ch.receive.to_string(),
            ch.kind.to_string(),
            v.to_string(),
            set.residual.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row of the platonic-solid property table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SolidRow {
    pub solid: Solid,
    pub plates: usize,
    pub channels: usize,
    pub non_adjacent: usize,
    pub rotational_order: usize,
}

pub fn solid_table() -> Result<Vec<SolidRow>> {
    Solid::ALL
        .iter()
        .map(|&solid| {
            let layout = generate_layout(solid, 1.0, 0.0, UnitQuaternion::identity())?;
            Ok(SolidRow {
                solid,
                plates: layout.plate_count(),
                channels: layout.channels.len(),
                non_adjacent: layout.non_adjacent_count(),
                rotational_order: rotational_order(solid),
            })
        })
        .collect()
}

/// Layout documents, channel tables and the solid property table.
pub fn cmd_layout(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = &config.out_dir;
    let mut written = Vec::new();
    let path = out.join("solids.csv");
    write_csv_file(&path, config, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "solid",
            "plates",
            "channels",
            "non_adjacent",
            "rotational_order",
        ])?;
        for r in solid_table()? {
            w.write_record([
                r.solid.to_string(),
                r.plates.to_string(),
                r.channels.to_string(),
                r.non_adjacent.to_string(),
                r.rotational_order.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    written.push(path);
    for spec in &config.sensors {
        let layout = spec.layout()?;
        let path = out.join(format!("{}.layout.json", spec.name));
        fs::create_dir_all(out)?;
        fs::write(&path, layout.to_json()?)?;
        written.push(path);
        let path = out.join(format!("{}.channels.csv", spec.name));
        write_csv_file(&path, config, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["transmit", "receive", "kind"])?;
            for ch in &layout.channels {
                w.write_record([
                    ch.transmit.to_string(),
                    ch.receive.to_string(),
                    ch.kind.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Empty, full and optional extra scenario per sensor, plus dynamic range.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = &config.out_dir;
    let mut written = Vec::new();
    for spec in &config.sensors {
        let sim = Simulator::new(spec, config)?;
        let empty = sim.empty()?;
        let full = sim.full()?;
        let mut sets = vec![("empty", empty.clone()), ("full", full.clone())];
        if let Some(sc) = &config.scenario {
            sets.push(("scenario", sim.scenario(sc, "scenario")?));
        }
        for (label, set) in &sets {
            let domain_label = match *label {
                "empty" => FillScenario::Uniform { fraction: 0.0 },
                "full" => FillScenario::Uniform { fraction: 1.0 },
                _ => config.scenario.clone().expect("scenario present"),
            };
            let scenario_hash = domain_hash(&sim.domain(&domain_label)?);
            let path = out.join(format!("{}.{label}.csv", spec.name));
            write_csv_file(&path, config, |buf| {
                writeln!(buf, "# scenario {scenario_hash}")?;
                write_capacitance_csv(buf, set)
            })?;
            written.push(path);
        }
        let dr = crate::metrics::dynamic_range(&full, &empty)?;
        let path = out.join(format!("{}.dynamic_range.csv", spec.name));
        write_csv_file(&path, config, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record([
                "transmit",
                "receive",
                "kind",
                "empty",
                "full",
                "dynamic_range",
            ])?;
            for i in 0..dr.len() {
                let ch = empty.channels[i];
                w.write_record([
                    ch.transmit.to_string(),
                    ch.receive.to_string(),
                    ch.kind.to_string(),
                    empty.values[i].to_string(),
                    full.values[i].to_string(),
                    dr[i].to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?;
        written.push(path);
        info!(
            "{}: {} solves",
            spec.name,
            sim.solves.load(Ordering::Relaxed)
        );
    }
    Ok(written)
}

/// Sensitivity on the image grid for one sensor.
pub fn image_sensitivity(sim: &Simulator, image: usize) -> Result<SensitivityMatrix> {
    downsample_sensitivity(&sim.sensitivity()?, image)
}

pub fn sensor_metrics(sim: &Simulator, config: &ExperimentConfig) -> Result<MetricsReport> {
    let s = image_sensitivity(sim, config.grid.image)?;
    MetricsReport::compute(
        &sim.empty()?,
        &sim.full()?,
        &s,
        &config.noise.model,
        config.noise.samples,
        config.seed,
    )
}

/// Per-channel metrics and singularity curves per sensor, plus a per-kind
/// summary across sensors.
pub fn cmd_metrics(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = &config.out_dir;
    let mut written = Vec::new();
    let mut summary = Vec::new();
    for spec in &config.sensors {
        let sim = Simulator::new(spec, config)?;
        let report = sensor_metrics(&sim, config)?;
        let path = out.join(format!("{}.metrics.csv", spec.name));
        write_csv_file(&path, config, |buf| report.write_csv(buf))?;
        written.push(path);
        for &tilt in &config.sweeps.tilts {
            let curve = singularity_curve(
                &sim.layout,
                &tilt_about_x(tilt),
                config.sweeps.singularity_steps,
            )?;
            let path = out.join(format!("{}.singularity.tilt{tilt}.csv", spec.name));
            write_csv_file(&path, config, |buf| curve.write_csv(buf))?;
            written.push(path);
        }
        summary.push((spec.name.clone(), report));
    }
    let path = out.join("ssq_summary.csv");
    write_csv_file(&path, config, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "sensor",
            "kind",
            "channels",
            "mean_ssq",
            "total_ssq",
            "mean_ssnr",
        ])?;
        for (name, r) in &summary {
            let rows = r
                .by_kind
                .iter()
                .map(|(k, s)| (k.to_string(), s))
                .chain(std::iter::once(("all".into(), &r.overall)));
            for (kind, s) in rows {
                w.write_record([
                    name.clone(),
                    kind,
                    s.count.to_string(),
                    s.mean_ssq.to_string(),
                    s.total_ssq.to_string(),
                    s.mean_ssnr.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    written.push(path);
    Ok(written)
}

/// Gauging results for one sensor.
pub struct SensorGauge {
    pub reports: Vec<GaugeReport>,
    pub ball: BallSweep,
    /// Normalized frames per tilt as `(tilt, [(true_fraction, frame)])`.
    pub profiles: Vec<(f64, Vec<(f64, NormalizedFrame)>)>,
    pub sensitivity: SensitivityMatrix,
}

pub fn sensor_gauge(sim: &Simulator, config: &ExperimentConfig) -> Result<SensorGauge> {
    let empty = sim.empty()?;
    let full = sim.full()?;
    let s = image_sensitivity(sim, config.grid.image)?;
    let profiles = config
        .sweeps
        .tilts
        .iter()
        .map(|&tilt| {
            let frames = sim
                .stratified_sweep(config.sweeps.steps, tilt)?
                .into_iter()
                .map(|(t, c)| normalize_frame(&c, &empty, &full).map(|f| (t, f)))
                .collect::<Result<Vec<_>>>()?;
            Ok((tilt, frames))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = accuracy_table(&sim.spec.name, &s, &profiles, &Method::ALL, &config.gauge)?;
    let ball = ball_sweep(&sim.ball_frames(&config.sweeps.ball)?, &empty, &full)?;
    Ok(SensorGauge {
        reports,
        ball,
        profiles,
        sensitivity: s,
    })
}

/// Accuracy table, fill profiles, ball-sweep stability and reconstructed
/// images near quarter, half and three-quarter fill.
pub fn cmd_gauge(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = &config.out_dir;
    let mut written = Vec::new();
    let mut all = Vec::new();
    for spec in &config.sensors {
        let sim = Simulator::new(spec, config)?;
        let g = sensor_gauge(&sim, config)?;
        let path = out.join(format!("{}.ball.csv", spec.name));
        write_csv_file(&path, config, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let kinds: Vec<_> = g.ball.by_kind.keys().collect();
            let mut head = vec!["position".to_string(), "ecvs".to_string()];
            head.extend(kinds.iter().map(|k| k.to_string()));
            w.write_record(&head)?;
            for (i, r) in g.ball.readings.iter().enumerate() {
                let mut row = vec![i.to_string(), r.to_string()];
                row.extend(kinds.iter().map(|k| g.ball.by_kind[*k][i].to_string()));
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        })?;
        written.push(path);
        for (tilt, frames) in &g.profiles {
            for target in [0.25, 0.5, 0.75] {
                let (truth, frame) = frames
                    .iter()
                    .min_by(|a, b| (a.0 - target).abs().total_cmp(&(b.0 - target).abs()))
                    .expect("sweeps have frames");
                let images = [
                    (
                        Method::Lbp,
                        lbp_reconstruct(&g.sensitivity, frame, config.gauge.lbp_channels)?,
                    ),
                    (
                        Method::Iterative,
                        iterative_reconstruct(
                            &g.sensitivity,
                            frame,
                            config.gauge.iterations,
                            config.gauge.step,
                            config.gauge.iterative_channels,
                        )?
                        .image,
                    ),
                ];
                for (method, img) in images {
                    let path = out.join(format!(
                        "{}.{method}.tilt{tilt}.fill{truth:.3}.grid",
                        spec.name
                    ));
                    img.write(create(&path)?, spec.tank_radius, config.phases)?;
                    written.push(path);
                }
            }
        }
        all.extend(g.reports);
    }
    let path = out.join("gauge.csv");
    write_csv_file(&path, config, |buf| write_gauge_csv(buf, &all))?;
    written.push(path);
    Ok(written)
}

/// Side-by-side figures for exactly two sensors; ratios are first/second.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub names: [String; 2],
    pub rows: Vec<(String, f64, f64)>,
}

impl Comparison {
    pub fn value(&self, quantity: &str) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .find(|r| r.0 == quantity)
            .map(|r| (r.1, r.2))
    }
}

pub fn compare(config: &ExperimentConfig) -> Result<Comparison> {
    if config.sensors.len() != 2 {
        return Err(Error::Config(format!(
            "compare needs exactly 2 sensors, got {}",
            config.sensors.len()
        )));
    }
    let mut cols = Vec::new();
    for spec in &config.sensors {
        let sim = Simulator::new(spec, config)?;
        let m = sensor_metrics(&sim, config)?;
        let g = sensor_gauge(&sim, config)?;
        let mut rows = vec![
            ("mean_ssnr".to_string(), m.overall.mean_ssnr),
            ("total_ssq".to_string(), m.overall.total_ssq),
            (
                "mean_dynamic_range".to_string(),
                m.overall.mean_dynamic_range,
            ),
            ("ball_drift".to_string(), g.ball.drift),
        ];
        for r in &g.reports {
            rows.push((format!("{}_max_error", r.method), r.max_error));
            rows.push((format!("{}_mean_error", r.method), r.mean_error));
        }
        cols.push(rows);
    }
    Ok(Comparison {
        names: [
            config.sensors[0].name.clone(),
            config.sensors[1].name.clone(),
        ],
        rows: cols[0]
            .iter()
            .zip(&cols[1])
            .map(|((q, a), (_, b))| (q.clone(), *a, *b))
            .collect(),
    })
}

pub fn cmd_compare(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let c = compare(config)?;
    let path = config.out_dir.join("compare.csv");
    write_csv_file(&path, config, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["quantity", &c.names[0], &c.names[1], "ratio", "better"])?;
        for (q, a, b) in &c.rows {
            let higher_is_better =
                matches!(q.as_str(), "mean_ssnr" | "total_ssq" | "mean_dynamic_range");
            let better = if a == b {
                "tie"
            } else if (a > b) == higher_is_better {
                c.names[0].as_str()
            } else {
                c.names[1].as_str()
            };
            let ratio = if a == b { 1.0 } else { a / b };
            w.write_record([
                q.clone(),
                a.to_string(),
                b.to_string(),
                ratio.to_string(),
                better.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(vec![path])
}
