//! Batches of randomized episodes and their aggregate metrics.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::Scenario;
use crate::episode::{run_episode, EpisodeSetup};
use crate::error::{Error, Result};
use crate::kinematics::{arcs_from_cables, robot_forward, ArcParams, CableLengths, RobotConfig};
use crate::log::TrajectoryLog;
use crate::metrics::{
    aggregate, metrics_report, AggregateReport, MetricsReport, TransientCriterion,
};
use crate::reference::{
    generate_reference, planar_target, reference_features, GeneratorOptions, PlanarArc,
    PlanarChain, PlaneSpec,
};

/// Attempts per reference before the sampler gives up.
const MAX_SAMPLE_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Generated from a random reachable end-effector target.
    Random,
    /// Planar chain with alternating curvature signs.
    SShape,
}

/// A sampled reference shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledReference {
    pub kind: ReferenceKind,
    pub arcs: Vec<ArcParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchOptions {
    /// References per batch (random plus S-shapes).
    pub references: usize,
    /// How many of them are S-shapes.
    pub s_shapes: usize,
    pub seed: u64,
    /// Switching threshold used for every reference.
    pub threshold: f64,
    /// Transient criterion; chosen from the section count when absent.
    pub criterion: Option<TransientCriterion>,
    /// Keeps sampled tendon lengths this far (mm) inside their limits.
    pub cable_margin: f64,
    /// Largest bend (rad) of a sampled section.
    pub max_bend: f64,
    /// Worker threads; 0 or 1 runs sequentially.
    pub threads: usize,
    pub generator: GeneratorOptions,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            references: 20,
            s_shapes: 5,
            seed: 0,
            threshold: 0.5,
            criterion: None,
            cable_margin: 5.0,
            max_bend: 2.0,
            threads: 0,
            generator: GeneratorOptions::default(),
        }
    }
}

impl BatchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.references == 0 {
            return Err(Error::InvalidConfig(
                "a batch needs at least one reference".into(),
            ));
        }
        if self.s_shapes > self.references {
            return Err(Error::InvalidConfig("more S-shapes than references".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig("threshold must be positive".into()));
        }
        if !(self.max_bend > 0.0 && self.max_bend < std::f64::consts::PI) {
            return Err(Error::InvalidConfig("max_bend must lie in (0, pi)".into()));
        }
        Ok(())
    }
}

/// Outcome of one batch episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub reference: SampledReference,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
    /// Wall-clock duration of the episode (s); not part of the aggregate.
    pub wall_seconds: f64,
    #[serde(skip)]
    pub log: Option<TrajectoryLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub sections: usize,
    pub seed: u64,
    pub criterion: TransientCriterion,
    pub episodes: Vec<EpisodeResult>,
    pub aggregate: AggregateReport,
    /// Episodes that failed with an error.
    pub failures: usize,
}

/// Draws a tendon state whose sections bend less than `max_bend`.
fn sample_cables(
    config: &RobotConfig,
    options: &BatchOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CableLengths>> {
    config
        .sections
        .iter()
        .map(|spec| {
            let lo = spec.s_min + options.cable_margin;
            let hi = spec.s_max - options.cable_margin;
            for _ in 0..MAX_SAMPLE_ATTEMPTS {
                let c = CableLengths::new(
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                );
                let single = RobotConfig {
                    sections: vec![*spec],
                    base: config.base,
                };
                if arcs_from_cables(&single, &[c]).is_ok_and(|a| a[0].bend() < options.max_bend) {
                    return Ok(c);
                }
            }
            Err(Error::InvalidConfig(
                "cannot sample an admissible tendon state".into(),
            ))
        })
        .collect()
}

/// Random reference: the end-effector position of a random tendon state,
/// reshaped by the reference generator.
fn sample_random(
    config: &RobotConfig,
    camera: &crate::camera::Camera,
    options: &BatchOptions,
    rng: &mut ChaCha8Rng,
) -> Result<SampledReference> {
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let cables = sample_cables(config, options, rng)?;
        let arcs = arcs_from_cables(config, &cables)?;
        let tip = robot_forward(config, &arcs)?
            .last()
            .expect("at least one section")
            .translation;
        let (target, plane) = planar_target(&tip, PlaneSpec::Auto, None);
        let mut generator = options.generator.clone();
        generator.search.cable_margin = options.cable_margin;
        if let Ok(r) = generate_reference(&target, plane, config, camera, &generator) {
            return Ok(SampledReference {
                kind: ReferenceKind::Random,
                arcs: r.arcs,
            });
        }
    }
    Err(Error::InvalidConfig(
        "cannot sample a reachable reference".into(),
    ))
}

/// S-shape reference: planar arcs whose curvatures alternate in sign.
fn sample_s_shape(
    config: &RobotConfig,
    camera: &crate::camera::Camera,
    options: &BatchOptions,
    rng: &mut ChaCha8Rng,
) -> Result<SampledReference> {
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let plane_angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let first = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let arcs = config
            .sections
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let s = rng.gen_range(
                    spec.s_min + options.cable_margin..spec.s_max - options.cable_margin,
                );
                let bend = rng.gen_range(0.3..options.max_bend.min(1.2));
                let sign = if i % 2 == 0 { first } else { -first };
                PlanarArc::new(s, sign * bend / s)
            })
            .collect();
        let chain = PlanarChain { plane_angle, arcs };
        if !chain.admissible_with_margin(config, options.cable_margin) {
            continue;
        }
        let arcs = chain.to_arcs();
        if reference_features(&arcs, config, camera).is_ok() {
            return Ok(SampledReference {
                kind: ReferenceKind::SShape,
                arcs,
            });
        }
    }
    Err(Error::InvalidConfig(
        "cannot sample an S-shape reference".into(),
    ))
}

/// The references of a batch, deterministic in `options.seed`.
pub fn sample_references(
    setup: &EpisodeSetup,
    options: &BatchOptions,
) -> Result<Vec<SampledReference>> {
    options.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let random = options.references - options.s_shapes;
    let mut out = Vec::with_capacity(options.references);
    for _ in 0..random {
        out.push(sample_random(
            &setup.robot,
            &setup.camera,
            options,
            &mut rng,
        )?);
    }
    for _ in 0..options.s_shapes {
        out.push(sample_s_shape(
            &setup.robot,
            &setup.camera,
            options,
            &mut rng,
        )?);
    }
    Ok(out)
}

/// Runs one episode per sampled reference from the retracted pose. Episode
/// failures are recorded and the batch continues. With noise enabled, every
/// episode draws its own noise seed from the batch seed.
pub fn run_batch(
    setup: &EpisodeSetup,
    options: &BatchOptions,
    keep_logs: bool,
) -> Result<BatchReport> {
    setup.validate()?;
    let references = sample_references(setup, options)?;
    let criterion = options
        .criterion
        .unwrap_or_else(|| TransientCriterion::for_sections(setup.robot.num_sections()));

    let run_one = |index: usize, reference: &SampledReference| -> EpisodeResult {
        let started = Instant::now();
        let mut ep_setup = setup.clone();
        ep_setup.noise.seed = setup.noise.seed.wrapping_add(index as u64);
        let outcome = reference_features(&reference.arcs, &setup.robot, &setup.camera)
            .and_then(|f| run_episode(&ep_setup, &Scenario::single(f, options.threshold)))
            .and_then(|log| metrics_report(&log, criterion).map(|m| (m, log)));
        let wall_seconds = started.elapsed().as_secs_f64();
        match outcome {
            Ok((report, log)) => EpisodeResult {
                index,
                reference: reference.clone(),
                report: Some(report),
                error: None,
                wall_seconds,
                log: keep_logs.then_some(log),
            },
            Err(e) => EpisodeResult {
                index,
                reference: reference.clone(),
                report: None,
                error: Some(e.to_string()),
                wall_seconds,
                log: None,
            },
        }
    };

    let episodes: Vec<EpisodeResult> = if options.threads > 1 {
        let chunk = references.len().div_ceil(options.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = references
                .chunks(chunk)
                .enumerate()
                .map(|(c, refs)| {
                    let run_one = &run_one;
                    scope.spawn(move || {
                        refs.iter()
                            .enumerate()
                            .map(|(j, r)| run_one(c * chunk + j, r))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("batch worker panicked"))
                .collect()
        })
    } else {
        references
            .iter()
            .enumerate()
            .map(|(i, r)| run_one(i, r))
            .collect()
    };

    let reports: Vec<MetricsReport> = episodes.iter().filter_map(|e| e.report).collect();
    let mut aggregate = aggregate(&reports);
    let failures = episodes.len() - reports.len();
    aggregate.episodes = episodes.len();
    Ok(BatchReport {
        sections: setup.robot.num_sections(),
        seed: options.seed,
        criterion,
        episodes,
        aggregate,
        failures,
    })
}
