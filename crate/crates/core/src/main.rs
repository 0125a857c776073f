use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecvs::pipeline::{self, ExperimentConfig};
use ecvs::Error;

#[derive(Parser)]
#[command(
    name = "ecvs",
    version,
    about = "Electrical capacitance volume sensor simulation and gauging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write sensor layouts, channel tables and the solid property table.
    Layout(Common),
    /// Solve empty, full and configured scenarios.
    Simulate(Common),
    /// Channel metrics, SSQ/SSNR and singularity curves.
    Metrics(Common),
    /// Gauging accuracy, ball stability and reconstructed images.
    Gauge(Common),
    /// Compare two sensors side by side.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Solve grid voxels per edge.
    #[arg(long)]
    grid: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> ecvs::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(d) = &self.cache {
            c.cache_dir = Some(d.clone());
        }
        if let Some(n) = self.grid {
            c.grid.solve = n;
            c.grid.image = c.grid.image.min(n);
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

type Pipeline = fn(&ExperimentConfig) -> ecvs::Result<Vec<PathBuf>>;

fn run(cli: Cli) -> ecvs::Result<Vec<PathBuf>> {
    let (common, f): (&Common, Pipeline) = match &cli.command {
        Command::Layout(c) => (c, pipeline::cmd_layout),
        Command::Simulate(c) => (c, pipeline::cmd_simulate),
        Command::Metrics(c) => (c, pipeline::cmd_metrics),
        Command::Gauge(c) => (c, pipeline::cmd_gauge),
        Command::Compare(c) => (c, pipeline::cmd_compare),
    };
    let config = common.config()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut paths = vec![config.save_resolved()?];
    paths.extend(f(&config)?);
    Ok(paths)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_)
                | Error::InvalidParameter(_)
                | Error::Json(_)
                | Error::UnsupportedLayout(_) => 2,
                Error::NotConverged { .. } | Error::Diverged { .. } => 3,
                _ => 1,
            })
        }
    }
}
