//! Planar shape references: two-segment constant-curvature inverse kinematics,
//! segment insertion, and balancing/obstacle-aware refinement.
//!
//! Planar coordinates live in a plane through the base axis. A point is
//! `(a, b)`: `a` along the in-plane lateral direction `(cos psi, sin psi, 0)`
//! of the base frame and `b` along the base axis. Headings are measured from
//! the base axis toward `+a`, and positive signed curvature turns toward `+a`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{backproject, extract_shape_features, Camera, FeatureVector};
use crate::error::{Error, Result};
use crate::kinematics::{ArcParams, RobotConfig};

/// Largest bend considered by the search (just below a half turn).
const MAX_BEND: f64 = PI * 0.999;

/// One planar arc with signed curvature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarArc {
    /// Arc length (mm).
    pub s: f64,
    /// Signed curvature (1/mm).
    pub k: f64,
}

impl PlanarArc {
    pub fn new(s: f64, k: f64) -> Self {
        Self { s, k }
    }

    /// Signed bend angle.
    pub fn bend(&self) -> f64 {
        self.k * self.s
    }

    pub fn to_arc(&self, plane_angle: f64) -> ArcParams {
        ArcParams::from_signed(self.s, self.k, plane_angle)
    }

    /// End pose after following this arc from `start`.
    pub fn advance(&self, start: &PlanarPose) -> PlanarPose {
        let half = 0.5 * self.bend();
        let chord = self.s * sinc(half);
        let dir = start.heading + half;
        PlanarPose {
            a: start.a + chord * dir.sin(),
            b: start.b + chord * dir.cos(),
            heading: start.heading + self.bend(),
        }
    }

    /// Point at arc-length fraction `t` in `[0, 1]`.
    pub fn point_at(&self, start: &PlanarPose, t: f64) -> [f64; 2] {
        let p = PlanarArc::new(self.s * t, self.k).advance(start);
        [p.a, p.b]
    }

    /// Splits into `m` equal sub-arcs of the same curvature.
    pub fn split(&self, m: usize) -> Vec<PlanarArc> {
        vec![PlanarArc::new(self.s / m as f64, self.k); m.max(1)]
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Planar position (mm) and heading (rad).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub a: f64,
    pub b: f64,
    pub heading: f64,
}

impl PlanarPose {
    pub fn distance(&self, other: &PlanarPose) -> f64 {
        (self.a - other.a).hypot(self.b - other.b)
    }
}

/// Target of the inverse kinematics; a free heading is chosen by the solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarTarget {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub heading: Option<f64>,
}

/// A chain of planar arcs in a given plane of the base frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarChain {
    pub plane_angle: f64,
    pub arcs: Vec<PlanarArc>,
}

impl PlanarChain {
    pub fn end_pose(&self) -> PlanarPose {
        self.poses().last().copied().unwrap_or_default()
    }

    /// Base pose followed by the pose at every arc end.
    pub fn poses(&self) -> Vec<PlanarPose> {
        let mut out = vec![PlanarPose::default()];
        for arc in &self.arcs {
            let next = arc.advance(out.last().unwrap());
            out.push(next);
        }
        out
    }

    pub fn to_arcs(&self) -> Vec<ArcParams> {
        self.arcs
            .iter()
            .map(|a| a.to_arc(self.plane_angle))
            .collect()
    }

    /// Points sampled along the chain at roughly `step` mm spacing.
    pub fn sample_points(&self, step: f64) -> Vec<[f64; 2]> {
        let poses = self.poses();
        let mut out = Vec::new();
        for (arc, start) in self.arcs.iter().zip(&poses) {
            let n = (arc.s / step).ceil().max(1.0) as usize;
            out.extend((0..=n).map(|j| arc.point_at(start, j as f64 / n as f64)));
        }
        out
    }

    /// True when every arc is admissible for its section.
    pub fn admissible(&self, config: &RobotConfig) -> bool {
        self.admissible_with_margin(config, 0.0)
    }

    /// Admissible with every tendon `margin` mm inside its limits.
    pub fn admissible_with_margin(&self, config: &RobotConfig, margin: f64) -> bool {
        self.arcs.len() == config.num_sections()
            && self.arcs.iter().zip(&config.sections).all(|(a, spec)| {
                a.bend().abs() < PI && spec.admits_with_margin(&a.to_arc(self.plane_angle), margin)
            })
    }
}

/// Keep-out disc in the reference plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    /// Smallest clearance of the sampled chain to the disc boundary.
    pub fn clearance(&self, points: &[[f64; 2]]) -> f64 {
        points
            .iter()
            .map(|p| (p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceCriterion {
    /// Minimize the variance of the section curvatures.
    Curvature,
    /// Minimize the variance of the section lengths.
    #[default]
    Length,
}

impl BalanceCriterion {
    pub fn cost(&self, chain: &PlanarChain) -> f64 {
        let values: Vec<f64> = match self {
            BalanceCriterion::Curvature => chain.arcs.iter().map(|a| a.k.abs()).collect(),
            BalanceCriterion::Length => chain.arcs.iter().map(|a| a.s).collect(),
        };
        variance(&values)
    }
}

fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Search resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Grid points over the first-arc bend.
    pub bend_samples: usize,
    /// Grid points over the end heading when it is free.
    pub heading_samples: usize,
    /// Golden-section iterations of the local refinement.
    pub refine_iterations: usize,
    /// Required clearance (mm) from obstacle discs.
    pub obstacle_margin: f64,
    /// Sample spacing (mm) for obstacle checks.
    pub sample_step: f64,
    /// Keeps generated tendon lengths this far (mm) inside their limits.
    pub cable_margin: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            bend_samples: 360,
            heading_samples: 72,
            refine_iterations: 60,
            obstacle_margin: 5.0,
            sample_step: 2.0,
            cable_margin: 2.0,
        }
    }
}

/// Arc lengths of the two arcs reaching `(a, b)` with bends `t1` and `t2`,
/// or `None` when no positive solution exists.
fn solve_lengths(a: f64, b: f64, t1: f64, t2: f64) -> Option<(f64, f64)> {
    let d1 = 0.5 * t1;
    let d2 = t1 + 0.5 * t2;
    let u1 = Vector2::new(d1.sin(), d1.cos()) * sinc(0.5 * t1);
    let u2 = Vector2::new(d2.sin(), d2.cos()) * sinc(0.5 * t2);
    let m = Matrix2::from_columns(&[u1, u2]);
    let target = Vector2::new(a, b);
    let det = m.determinant();
    let (s1, s2) = if det.abs() < 1e-9 {
        // Parallel chords: balanced split along the common direction.
        let along = u1.dot(&target) / u1.norm_squared();
        if (target - u1 * along).norm() > 1e-9 || along <= 0.0 {
            return None;
        }
        let split = along / (1.0 + u2.norm() / u1.norm());
        (split, (along - split) * u1.norm() / u2.norm())
    } else {
        let s = m.try_inverse()? * target;
        (s.x, s.y)
    };
    (s1 > 0.0 && s2 > 0.0 && s1.is_finite() && s2.is_finite()).then_some((s1, s2))
}

fn two_arcs(t1: f64, t2: f64, s1: f64, s2: f64) -> [PlanarArc; 2] {
    [PlanarArc::new(s1, t1 / s1), PlanarArc::new(s2, t2 / s2)]
}

/// Symmetric grid over `(-max, max)` that contains zero.
fn symmetric_grid(samples: usize, max: f64) -> Vec<f64> {
    let half = (samples / 2).max(1);
    (-(half as i64)..=half as i64)
        .map(|j| max * j as f64 / half as f64)
        .collect()
}

/// Core search: scores every two-arc solution reaching the target with
/// `score` (`None` = rejected) and returns the best after local refinement.
/// On failure returns the smallest position residual seen with lengths
/// clamped to `length_range`, or the target distance when no candidate needed
/// clamping.
fn search_two_arcs<F>(
    target: &PlanarTarget,
    length_range: (f64, f64),
    options: &SearchOptions,
    score: F,
) -> std::result::Result<([PlanarArc; 2], f64), f64>
where
    F: Fn(&[PlanarArc; 2]) -> Option<f64>,
{
    let bends = symmetric_grid(options.bend_samples, MAX_BEND);
    let headings = match target.heading {
        Some(h) => vec![h],
        None => symmetric_grid(options.heading_samples, 2.0 * MAX_BEND),
    };
    let eval = |t1: f64, h: f64| -> Option<([PlanarArc; 2], f64)> {
        let t2 = h - t1;
        if t1.abs() >= PI || t2.abs() >= PI {
            return None;
        }
        let (s1, s2) = solve_lengths(target.a, target.b, t1, t2)?;
        let arcs = two_arcs(t1, t2, s1, s2);
        score(&arcs).map(|c| (arcs, c))
    };

    let mut best: Option<(f64, f64, [PlanarArc; 2], f64)> = None;
    let mut residual = f64::INFINITY;
    for &h in &headings {
        for &t1 in &bends {
            match eval(t1, h) {
                Some((arcs, c)) => {
                    if best.as_ref().is_none_or(|b| c < b.3) {
                        best = Some((t1, h, arcs, c));
                    }
                }
                None => residual = residual.min(clamped_residual(target, t1, h - t1, length_range)),
            }
        }
    }
    let Some((mut t1, mut h, mut arcs, mut cost)) = best else {
        return Err(if residual.is_finite() {
            residual
        } else {
            target.a.hypot(target.b)
        });
    };

    // Coordinate-wise golden-section refinement around the grid optimum.
    let step_t = 2.0 * MAX_BEND / options.bend_samples.max(1) as f64;
    let step_h = 4.0 * MAX_BEND / options.heading_samples.max(1) as f64;
    for _ in 0..2 {
        if let Some((x, a, c)) = golden(|x| eval(x, h), t1, step_t, options.refine_iterations) {
            if c < cost {
                (t1, arcs, cost) = (x, a, c);
            }
        }
        if target.heading.is_none() {
            if let Some((x, a, c)) = golden(|x| eval(t1, x), h, step_h, options.refine_iterations) {
                if c < cost {
                    (h, arcs, cost) = (x, a, c);
                }
            }
        }
    }
    Ok((arcs, cost))
}

fn clamped_residual(target: &PlanarTarget, t1: f64, t2: f64, range: (f64, f64)) -> f64 {
    if t1.abs() >= PI || t2.abs() >= PI {
        return f64::INFINITY;
    }
    let lsq = |s1: f64, s2: f64| {
        let arcs = two_arcs(t1, t2, s1, s2);
        let chain = PlanarChain {
            plane_angle: 0.0,
            arcs: arcs.to_vec(),
        };
        let end = chain.end_pose();
        (end.a - target.a).hypot(end.b - target.b)
    };
    match solve_lengths(target.a, target.b, t1, t2) {
        // In-range lengths were rejected for another reason, not for distance.
        Some((s1, s2))
            if (range.0..=range.1).contains(&s1) && (range.0..=range.1).contains(&s2) =>
        {
            f64::INFINITY
        }
        Some((s1, s2)) => lsq(s1.clamp(range.0, range.1), s2.clamp(range.0, range.1)),
        None => lsq(range.0, range.0),
    }
}

/// Golden-section search of `f` over `[x0 - h, x0 + h]`; rejected points
/// count as infinitely bad.
fn golden<F>(f: F, x0: f64, h: f64, iterations: usize) -> Option<(f64, [PlanarArc; 2], f64)>
where
    F: Fn(f64) -> Option<([PlanarArc; 2], f64)>,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let cost = |x: f64| f(x).map_or(f64::INFINITY, |r| r.1);
    let (mut lo, mut hi) = (x0 - h, x0 + h);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut c1, mut c2) = (cost(x1), cost(x2));
    for _ in 0..iterations {
        if c1 <= c2 {
            hi = x2;
            (x2, c2) = (x1, c1);
            x1 = hi - g * (hi - lo);
            c1 = cost(x1);
        } else {
            lo = x1;
            (x1, c1) = (x2, c2);
            x2 = lo + g * (hi - lo);
            c2 = cost(x2);
        }
    }
    let x = if c1 <= c2 { x1 } else { x2 };
    f(x).map(|(a, c)| (x, a, c))
}

/// Squared total bend, the default shape objective.
fn bend_cost(arcs: &[PlanarArc]) -> f64 {
    arcs.iter().map(|a| a.bend().powi(2)).sum()
}

/// Two tangent-continuous arcs from the base to `target`, each admissible for
/// the matching section of a two-section robot in the plane at `plane_angle`.
pub fn two_segment_ik(
    target: &PlanarTarget,
    config: &RobotConfig,
    plane_angle: f64,
    options: &SearchOptions,
) -> Result<[PlanarArc; 2]> {
    if config.num_sections() != 2 {
        return Err(Error::LengthMismatch {
            expected: 2,
            actual: config.num_sections(),
        });
    }
    let range = length_range(config, 1);
    search_two_arcs(target, range, options, |arcs| {
        let chain = PlanarChain {
            plane_angle,
            arcs: arcs.to_vec(),
        };
        chain
            .admissible_with_margin(config, options.cable_margin)
            .then(|| bend_cost(arcs))
    })
    .map(|(arcs, _)| arcs)
    .map_err(|residual| Error::Unreachable { residual })
}

fn length_range(config: &RobotConfig, per_arc: usize) -> (f64, f64) {
    let lo = config
        .sections
        .iter()
        .map(|s| s.s_min)
        .fold(f64::INFINITY, f64::min);
    let hi = config.sections.iter().map(|s| s.s_max).fold(0.0, f64::max);
    (lo * per_arc as f64, hi * per_arc as f64)
}

/// Splits the longest arc in half until there are `n` arcs.
pub fn insert_segments(arcs: &[ArcParams], n: usize) -> Vec<ArcParams> {
    let mut out = arcs.to_vec();
    while out.len() < n && !out.is_empty() {
        let longest = out
            .iter()
            .enumerate()
            .fold(0, |best, (i, a)| if a.s > out[best].s { i } else { best });
        let half = ArcParams {
            s: 0.5 * out[longest].s,
            ..out[longest]
        };
        out[longest] = half;
        out.insert(longest + 1, half);
    }
    out
}

fn insert_planar(arcs: &[PlanarArc], n: usize) -> Vec<PlanarArc> {
    let mut out = arcs.to_vec();
    while out.len() < n && !out.is_empty() {
        let longest = out
            .iter()
            .enumerate()
            .fold(0, |best, (i, a)| if a.s > out[best].s { i } else { best });
        let half = PlanarArc::new(0.5 * out[longest].s, out[longest].k);
        out[longest] = half;
        out.insert(longest + 1, half);
    }
    out
}

/// True when every sampled point clears every disc by `margin`.
pub fn clears_obstacles(
    chain: &PlanarChain,
    obstacles: &[Obstacle],
    margin: f64,
    step: f64,
) -> bool {
    if obstacles.is_empty() {
        return true;
    }
    let points = chain.sample_points(step);
    obstacles.iter().all(|o| o.clearance(&points) >= margin)
}

/// Local search over the two-arc redundancy and the split of the two arcs
/// into sections, holding the end pose fixed. Returns the input unless a
/// strictly better admissible, obstacle-free chain is found.
pub fn optimize_reference(
    chain: &PlanarChain,
    criterion: BalanceCriterion,
    obstacles: &[Obstacle],
    config: &RobotConfig,
    options: &SearchOptions,
) -> Result<PlanarChain> {
    let n = config.num_sections();
    config.check_len(chain.arcs.len())?;
    let end = chain.end_pose();
    let target = PlanarTarget {
        a: end.a,
        b: end.b,
        heading: Some(end.heading),
    };
    let feasible = |c: &PlanarChain| {
        c.admissible_with_margin(config, options.cable_margin)
            && clears_obstacles(c, obstacles, options.obstacle_margin, options.sample_step)
    };

    let mut best = feasible(chain).then(|| (criterion.cost(chain), chain.clone()));
    for n1 in 1..n {
        let build = |arcs: &[PlanarArc; 2]| {
            let mut all = arcs[0].split(n1);
            all.extend(arcs[1].split(n - n1));
            PlanarChain {
                plane_angle: chain.plane_angle,
                arcs: all,
            }
        };
        let found = search_two_arcs(
            &target,
            length_range(config, n1.max(n - n1)),
            options,
            |arcs| {
                let c = build(arcs);
                feasible(&c).then(|| criterion.cost(&c))
            },
        );
        if let Ok((arcs, cost)) = found {
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, build(&arcs)));
            }
        }
    }
    best.map(|(_, c)| c).ok_or(Error::Infeasible)
}

/// How the reference plane is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlaneSpec {
    /// Plane through the base axis and the target.
    #[default]
    Auto,
    /// Fixed plane angle (rad) about the base axis; the target is projected onto it.
    Angle { angle: f64 },
}

/// Target expressed as an image click plus depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickTarget {
    /// Pixel coordinates.
    pub pixel: [f64; 2],
    /// Depth along the optical axis (mm).
    pub depth_mm: f64,
    /// Optional end-effector heading in the plane (rad).
    #[serde(default)]
    pub heading: Option<f64>,
}

/// Planar target and plane angle for a base-frame point.
pub fn planar_target(
    point_base: &Vector3<f64>,
    plane: PlaneSpec,
    heading: Option<f64>,
) -> (PlanarTarget, f64) {
    let angle = match plane {
        PlaneSpec::Auto => {
            if point_base.x.hypot(point_base.y) < 1e-9 {
                0.0
            } else {
                point_base.y.atan2(point_base.x)
            }
        }
        PlaneSpec::Angle { angle } => angle,
    };
    let a = point_base.x * angle.cos() + point_base.y * angle.sin();
    (
        PlanarTarget {
            a,
            b: point_base.z,
            heading,
        },
        angle,
    )
}

/// Back-projects a click into the base frame and resolves its plane.
pub fn resolve_click(
    click: &ClickTarget,
    camera: &Camera,
    config: &RobotConfig,
    plane: PlaneSpec,
) -> Result<(PlanarTarget, f64)> {
    let world = backproject(
        click.pixel,
        click.depth_mm / crate::camera::DEPTH_UNIT_MM,
        camera,
    )?;
    let base = config.base.inverse().transform_point(&world);
    Ok(planar_target(&base, plane, click.heading))
}

/// Features of a chain of arcs, base to tip.
pub fn reference_features(
    arcs: &[ArcParams],
    config: &RobotConfig,
    camera: &Camera,
) -> Result<FeatureVector> {
    extract_shape_features(config, arcs, camera)
}

/// Everything needed to generate a reference.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorOptions {
    pub search: SearchOptions,
    /// Balance criterion for the refinement; `None` skips it.
    pub balance: Option<BalanceCriterion>,
    pub obstacles: Vec<Obstacle>,
}

/// A generated reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedReference {
    pub chain: PlanarChain,
    pub arcs: Vec<ArcParams>,
    pub features: FeatureVector,
}

/// Two-segment IK, insertion to the section count, optional balancing and
/// obstacle avoidance, then feature extraction.
pub fn generate_reference(
    target: &PlanarTarget,
    plane_angle: f64,
    config: &RobotConfig,
    camera: &Camera,
    options: &GeneratorOptions,
) -> Result<GeneratedReference> {
    let n = config.num_sections();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "reference generation needs at least two sections".into(),
        ));
    }
    let search = &options.search;
    let feasible = |c: &PlanarChain| {
        c.admissible_with_margin(config, search.cable_margin)
            && clears_obstacles(
                c,
                &options.obstacles,
                search.obstacle_margin,
                search.sample_step,
            )
    };
    let (arcs, _) = search_two_arcs(target, length_range(config, n - 1), search, |arcs| {
        let c = PlanarChain {
            plane_angle,
            arcs: insert_planar(arcs, n),
        };
        feasible(&c).then(|| bend_cost(arcs))
    })
    .map_err(|residual| Error::Unreachable { residual })?;
    let mut chain = PlanarChain {
        plane_angle,
        arcs: insert_planar(&arcs, n),
    };
    if let Some(criterion) = options.balance {
        chain = optimize_reference(&chain, criterion, &options.obstacles, config, search)?;
    }
    let arcs = chain.to_arcs();
    let features = reference_features(&arcs, config, camera)?;
    Ok(GeneratedReference {
        chain,
        arcs,
        features,
    })
}
