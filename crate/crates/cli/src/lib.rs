//! Command-line front end: single episodes, batches, metrics from logs,
//! reference generation and the live WebSocket service.

pub mod server;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use shapeservo::batch::{run_batch, BatchOptions};
use shapeservo::config::{
    load_json, resolve_scenario, save_json, ExperimentConfig, RobotFile, ScenarioFile,
};
use shapeservo::metrics::metrics_report;
use shapeservo::reference::{
    generate_reference, planar_target, resolve_click, BalanceCriterion, ClickTarget,
    GeneratorOptions, PlaneSpec,
};
use shapeservo::{run_episode, EpisodeSetup, MetricsReport, TrajectoryLog, TransientCriterion};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] shapeservo::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    WebSocket(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Mismatch(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "shapeservo",
    version,
    about = "Shape visual servoing of continuum robots in simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode of a scenario.
    Run(RunArgs),
    /// Run randomized episodes and aggregate their metrics.
    Batch(BatchArgs),
    /// Recompute metrics from a CSV trajectory log.
    Metrics(MetricsArgs),
    /// Generate a reference shape for an end-effector target.
    Reference(ReferenceArgs),
    /// Serve live sessions over WebSocket.
    Serve(ServeArgs),
}

/// Configuration shared by every simulating command.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Full experiment configuration (robot, camera, gains, sim, noise, generator).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Robot file; overrides the experiment file.
    #[arg(long)]
    pub robot: Option<PathBuf>,
    /// Camera file; overrides the experiment file.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Controller gains file; overrides the experiment file.
    #[arg(long)]
    pub gains: Option<PathBuf>,
    /// Uniform robot with this many default sections; ignored with --robot.
    #[arg(long)]
    pub sections: Option<usize>,
    /// Noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pixel noise standard deviation (px).
    #[arg(long)]
    pub sigma_px: Option<f64>,
    /// Depth noise standard deviation (mm).
    #[arg(long)]
    pub sigma_depth_mm: Option<f64>,
}

impl ConfigArgs {
    pub fn experiment(&self) -> CliResult<ExperimentConfig> {
        let mut cfg: ExperimentConfig = match &self.config {
            Some(p) => load_json(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.sections {
            cfg.robot = RobotFile {
                base: cfg.robot.base,
                ..RobotFile::uniform(n)
            };
        }
        if let Some(p) = &self.robot {
            cfg.robot = load_json(p)?;
        }
        if let Some(p) = &self.camera {
            cfg.camera = load_json(p)?;
        }
        if let Some(p) = &self.gains {
            cfg.gains = load_json(p)?;
        }
        if let Some(s) = self.seed {
            cfg.noise.seed = s;
        }
        if let Some(s) = self.sigma_px {
            cfg.noise.sigma_px = s;
        }
        if let Some(s) = self.sigma_depth_mm {
            cfg.noise.sigma_depth_mm = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Stringent,
    Relaxed,
}

impl From<CriterionArg> for TransientCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Stringent => TransientCriterion::Stringent,
            CriterionArg::Relaxed => TransientCriterion::Relaxed,
        }
    }
}

fn criterion_for(arg: Option<CriterionArg>, sections: usize) -> TransientCriterion {
    arg.map(Into::into)
        .unwrap_or_else(|| TransientCriterion::for_sections(sections))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Transient criterion; by default stringent up to two sections.
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    /// Output directory for the log and report.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of references.
    #[arg(long, short = 'k', default_value_t = 20)]
    pub references: usize,
    /// How many of them are S-shapes.
    #[arg(long, default_value_t = 5)]
    pub s_shapes: usize,
    /// Seed of the reference sampler.
    #[arg(long, default_value_t = 0)]
    pub batch_seed: u64,
    /// Switching threshold for every reference.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Also write one CSV log per episode.
    #[arg(long)]
    pub keep_logs: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// CSV trajectory log.
    pub log: PathBuf,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    /// Fail unless the recomputed report equals this JSON report exactly.
    #[arg(long)]
    pub expect: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BalanceArg {
    Length,
    Curvature,
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Clicked pixel `x,y`.
    #[arg(long, value_delimiter = ',', requires = "depth_mm")]
    pub pixel: Option<Vec<f64>>,
    /// Depth of the clicked target along the optical axis (mm).
    #[arg(long)]
    pub depth_mm: Option<f64>,
    /// Target point `x,y,z` (mm) in the base frame.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "pixel",
        allow_negative_numbers = true
    )]
    pub point: Option<Vec<f64>>,
    /// End-effector heading in the plane (rad); free when absent.
    #[arg(long, allow_negative_numbers = true)]
    pub heading: Option<f64>,
    /// Plane angle about the base axis (rad); through the target when absent.
    #[arg(long, allow_negative_numbers = true)]
    pub plane_angle: Option<f64>,
    /// Balance the sections after insertion.
    #[arg(long, value_enum)]
    pub balance: Option<BalanceArg>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Initial scenario; the robot holds its retracted pose without one.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Tick period (ms); the control period by default.
    #[arg(long)]
    pub tick_ms: Option<u64>,
    /// Exit after this many connections.
    #[arg(long)]
    pub max_connections: Option<usize>,
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

fn write_log(path: &Path, log: &TrajectoryLog) -> CliResult<()> {
    let file = std::fs::File::create(path)?;
    log.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

/// Runs one episode and writes `trajectory.csv`, `trajectory.json` and `metrics.json`.
pub fn cmd_run(args: &RunArgs) -> CliResult<MetricsReport> {
    let cfg = args.config.experiment()?;
    let setup = cfg.setup()?;
    let file: ScenarioFile = load_json(&args.scenario)?;
    let scenario = resolve_scenario(&file, &setup, &cfg.generator)?;
    let log = run_episode(&setup, &scenario)?;
    let report = metrics_report(
        &log,
        criterion_for(args.criterion, setup.robot.num_sections()),
    )?;
    ensure_dir(&args.out)?;
    write_log(&args.out.join("trajectory.csv"), &log)?;
    save_json(&args.out.join("trajectory.json"), &log)?;
    save_json(&args.out.join("metrics.json"), &report)?;
    Ok(report)
}

/// Runs a batch and writes `report.json` (plus per-episode logs on request).
pub fn cmd_batch(args: &BatchArgs) -> CliResult<shapeservo::batch::BatchReport> {
    let cfg = args.config.experiment()?;
    let setup: EpisodeSetup = cfg.setup()?;
    let options = BatchOptions {
        references: args.references,
        s_shapes: args.s_shapes,
        seed: args.batch_seed,
        threshold: args.threshold,
        criterion: args.criterion.map(Into::into),
        threads: args.threads,
        generator: cfg.generator.clone(),
        ..BatchOptions::default()
    };
    let report = run_batch(&setup, &options, args.keep_logs)?;
    ensure_dir(&args.out)?;
    if args.keep_logs {
        for e in &report.episodes {
            if let Some(log) = &e.log {
                write_log(&args.out.join(format!("episode_{:03}.csv", e.index)), log)?;
            }
        }
    }
    save_json(&args.out.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_metrics(args: &MetricsArgs) -> CliResult<MetricsReport> {
    let file = std::fs::File::open(&args.log)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.log.display())))?;
    let log = TrajectoryLog::read_csv(std::io::BufReader::new(file))?;
    let report = metrics_report(&log, criterion_for(args.criterion, log.sections))?;
    if let Some(path) = &args.expect {
        let expected: MetricsReport = load_json(path)?;
        if expected != report {
            return Err(CliError::Mismatch(format!(
                "recomputed metrics differ from {}",
                path.display()
            )));
        }
    }
    Ok(report)
}

pub fn cmd_reference(args: &ReferenceArgs) -> CliResult<shapeservo::reference::GeneratedReference> {
    let cfg = args.config.experiment()?;
    let setup = cfg.setup()?;
    let plane = match args.plane_angle {
        Some(angle) => PlaneSpec::Angle { angle },
        None => PlaneSpec::Auto,
    };
    let (target, angle) = match (&args.pixel, &args.point) {
        (Some(px), _) if px.len() != 2 => return Err(CliError::Usage("--pixel takes x,y".into())),
        (_, Some(p)) if p.len() != 3 => return Err(CliError::Usage("--point takes x,y,z".into())),
        (Some(px), None) => {
            let click = ClickTarget {
                pixel: [px[0], px[1]],
                depth_mm: args.depth_mm.unwrap_or_default(),
                heading: args.heading,
            };
            resolve_click(&click, &setup.camera, &setup.robot, plane)?
        }
        (None, Some(p)) => planar_target(&nalgebra_point(p), plane, args.heading),
        _ => {
            return Err(CliError::Usage(
                "give either --pixel with --depth-mm, or --point".into(),
            ))
        }
    };
    let generator = GeneratorOptions {
        balance: args.balance.map(|b| match b {
            BalanceArg::Length => BalanceCriterion::Length,
            BalanceArg::Curvature => BalanceCriterion::Curvature,
        }),
        ..cfg.generator.clone()
    };
    Ok(generate_reference(
        &target,
        angle,
        &setup.robot,
        &setup.camera,
        &generator,
    )?)
}

fn nalgebra_point(p: &[f64]) -> shapeservo::nalgebra::Vector3<f64> {
    shapeservo::nalgebra::Vector3::new(p[0], p[1], p[2])
}

pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    let cfg = args.config.experiment()?;
    let setup = cfg.setup()?;
    let scenario = match &args.scenario {
        Some(p) => Some(resolve_scenario(&load_json(p)?, &setup, &cfg.generator)?),
        None => None,
    };
    let tick = std::time::Duration::from_millis(
        args.tick_ms
            .unwrap_or((setup.sim.dt * 1000.0).round() as u64),
    );
    let listener = std::net::TcpListener::bind((args.host.as_str(), args.port))?;
    log::info!("listening on {}", listener.local_addr()?);
    let generator = cfg.generator.clone();
    server::serve(
        listener,
        move || {
            Ok(shapeservo::session::Session::new(
                setup.clone(),
                scenario.clone(),
                generator.clone(),
            )?)
        },
        tick,
        args.max_connections,
    )
}

/// Dispatches a parsed command line, printing results as JSON.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(a) => print_json(&cmd_run(&a)?),
        Command::Batch(a) => print_json(&cmd_batch(&a)?.aggregate),
        Command::Metrics(a) => print_json(&cmd_metrics(&a)?),
        Command::Reference(a) => print_json(&cmd_reference(&a)?),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(shapeservo::Error::from)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
