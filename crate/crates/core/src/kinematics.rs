//! Piecewise-constant-curvature kinematics of tendon-driven extensible sections.
//!
//! Each section is a circular arc described by its arc length `s`, curvature
//! `kappa >= 0` and bending direction `phi`. Three tendons placed at radius `d`
//! (120 degrees apart) map to arc parameters in closed form. The section tip
//! frame is evaluated through a Prismatic-Universal-Prismatic virtual linkage
//! whose Denavit-Hartenberg chain reproduces the constant-curvature arc.
//!
//! Units are mm and rad throughout.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI};

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{skew, RigidTransform};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Below this bend angle the half-tangent length uses its Taylor series.
const SERIES_BEND: f64 = 1e-6;

/// Robot-independent state of one section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcParams {
    /// Arc length (mm).
    pub s: f64,
    /// Curvature (1/mm), non-negative.
    pub kappa: f64,
    /// Bending direction (rad) in `(-pi, pi]`.
    pub phi: f64,
}

impl ArcParams {
    pub fn new(s: f64, kappa: f64, phi: f64) -> Self {
        Self { s, kappa, phi }
    }

    pub fn straight(s: f64) -> Self {
        Self::new(s, 0.0, 0.0)
    }

    /// Bend angle `kappa * s`.
    pub fn bend(&self) -> f64 {
        self.kappa * self.s
    }

    /// Builds an arc from a signed in-plane curvature; negative curvature flips
    /// the bending direction by pi.
    pub fn from_signed(s: f64, signed_kappa: f64, plane_angle: f64) -> Self {
        if signed_kappa > 0.0 {
            Self::new(s, signed_kappa, wrap_angle(plane_angle))
        } else if signed_kappa < 0.0 {
            Self::new(s, -signed_kappa, wrap_angle(plane_angle + PI))
        } else {
            Self::straight(s)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.kappa.is_finite() && self.phi.is_finite()) {
            return Err(Error::InvalidArc("non-finite parameter".into()));
        }
        if self.s <= 0.0 {
            return Err(Error::InvalidArc(format!(
                "arc length {} must be positive",
                self.s
            )));
        }
        if self.kappa < 0.0 {
            return Err(Error::InvalidArc(format!(
                "curvature {} must be non-negative",
                self.kappa
            )));
        }
        Ok(())
    }

    /// Bending-vector coordinates `(s, kappa cos phi, kappa sin phi)`, smooth through the
    /// straight configuration.
    #[cfg(test)]
    pub(crate) fn bending(&self) -> (f64, f64, f64) {
        let (sp, cp) = self.phi.sin_cos();
        (self.s, self.kappa * cp, self.kappa * sp)
    }
}

/// Tendon lengths of one section (mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CableLengths {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl CableLengths {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Self {
        Self { l1, l2, l3 }
    }

    pub fn uniform(l: f64) -> Self {
        Self::new(l, l, l)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn mean(&self) -> f64 {
        (self.l1 + self.l2 + self.l3) / 3.0
    }

    pub fn within(&self, spec: &SectionSpec) -> bool {
        self.as_array()
            .iter()
            .all(|&l| l >= spec.s_min && l <= spec.s_max)
    }
}

/// Flattens per-section cable triples as `[l11, l12, l13, l21, ...]`.
pub fn flatten_cables(cables: &[CableLengths]) -> Vec<f64> {
    cables.iter().flat_map(|c| c.as_array()).collect()
}

/// Inverse of [`flatten_cables`]. The length must be a multiple of 3.
pub fn unflatten_cables(values: &[f64]) -> Result<Vec<CableLengths>> {
    if !values.len().is_multiple_of(3) {
        return Err(Error::LengthMismatch {
            expected: values.len() / 3 * 3 + 3,
            actual: values.len(),
        });
    }
    Ok(values
        .chunks_exact(3)
        .map(CableLengths::from_slice)
        .collect())
}

/// Joint values of the Prismatic-Universal-Prismatic virtual linkage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PupJoints {
    /// Bending-plane selection (rad).
    pub q1: f64,
    /// First prismatic link (mm).
    pub q2: f64,
    /// Bend about the universal joint (rad).
    pub q3: f64,
    /// Second prismatic link (mm), always equal to `q2`.
    pub q4: f64,
    /// Undoes `q1` so the tip carries no axial roll (rad).
    pub q5: f64,
}

impl PupJoints {
    /// The virtual linkage as `(a, alpha, d, theta)` rows, one per link.
    pub fn dh_rows(&self) -> [(f64, f64, f64, f64); 5] {
        [
            (0.0, 0.0, 0.0, self.q1),
            (0.0, 0.0, self.q2, 0.0),
            (0.0, -FRAC_PI_2, 0.0, self.q3),
            (0.0, FRAC_PI_2, self.q4, 0.0),
            (0.0, 0.0, 0.0, self.q5),
        ]
    }

    /// Product of the five link transforms.
    pub fn forward(&self) -> RigidTransform {
        self.dh_rows()
            .iter()
            .fold(RigidTransform::identity(), |acc, &(a, alpha, d, theta)| {
                acc * RigidTransform::dh_modified(a, alpha, d, theta)
            })
    }
}

/// Geometry and actuation limits of one section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    /// Tendon placement radius (mm).
    pub d: f64,
    /// Minimum length (mm).
    pub s_min: f64,
    /// Maximum length (mm).
    pub s_max: f64,
}

impl Default for SectionSpec {
    /// Origami section: 80-200 mm stroke, tendons at 30 mm radius.
    fn default() -> Self {
        Self {
            d: 30.0,
            s_min: 80.0,
            s_max: 200.0,
        }
    }
}

impl SectionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d > 0.0
            && self.s_min > 0.0
            && self.s_min < self.s_max
            && self.d.is_finite()
            && self.s_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "section needs d > 0 and 0 < s_min < s_max, got {self:?}"
            )))
        }
    }

    /// True when `arc` is reachable by tendons kept within `[s_min, s_max]`.
    pub fn admits(&self, arc: &ArcParams) -> bool {
        self.admits_with_margin(arc, 0.0)
    }

    /// Like [`SectionSpec::admits`], with every tendon kept `margin` mm inside its limits.
    pub fn admits_with_margin(&self, arc: &ArcParams, margin: f64) -> bool {
        arc.validate().is_ok()
            && arc.s >= self.s_min
            && arc.s <= self.s_max
            && arc.bend() < PI
            && arc_to_cables(arc, self.d).is_ok_and(|c| {
                c.as_array()
                    .iter()
                    .all(|l| *l >= self.s_min + margin && *l <= self.s_max - margin)
            })
    }
}

/// Serial chain of sections mounted on a base frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub sections: Vec<SectionSpec>,
    pub base: RigidTransform,
}

impl RobotConfig {
    pub fn new(sections: Vec<SectionSpec>, base: RigidTransform) -> Result<Self> {
        let cfg = Self { sections, base };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `n` identical default sections at the world origin.
    pub fn uniform(n: usize) -> Self {
        Self {
            sections: vec![SectionSpec::default(); n],
            base: RigidTransform::identity(),
        }
    }

    pub fn num_sections(&self) -> usize {
        self.sections.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::InvalidConfig(
                "robot needs at least one section".into(),
            ));
        }
        for (i, s) in self.sections.iter().enumerate() {
            s.validate().map_err(|e| e.in_section(i))?;
        }
        if !self.base.is_proper(1e-9) {
            return Err(Error::InvalidConfig(
                "base rotation is not a proper rotation".into(),
            ));
        }
        Ok(())
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if n != self.sections.len() {
            return Err(Error::LengthMismatch {
                expected: self.sections.len(),
                actual: n,
            });
        }
        Ok(())
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Tendon lengths of an arc.
pub fn arc_to_cables(arc: &ArcParams, d: f64) -> Result<CableLengths> {
    arc.validate()?;
    let kd = arc.kappa * d;
    if kd >= 1.0 {
        return Err(Error::CableDomain { kappa_d: kd });
    }
    let (s, phi) = (arc.s, arc.phi);
    Ok(CableLengths::new(
        s * (1.0 - kd * phi.sin()),
        s * (1.0 + kd * (FRAC_PI_3 + phi).sin()),
        s * (1.0 - kd * (FRAC_PI_6 + phi).cos()),
    ))
}

/// Arc parameters from tendon lengths. Equal tendons give `kappa = 0, phi = 0`.
pub fn cables_to_arc(cables: &CableLengths, d: f64) -> Result<ArcParams> {
    let CableLengths { l1, l2, l3 } = *cables;
    if !(l1 > 0.0 && l2 > 0.0 && l3 > 0.0) {
        return Err(Error::InvalidArc(format!(
            "cable lengths must be positive, got {cables:?}"
        )));
    }
    let sum = l1 + l2 + l3;
    let s = sum / 3.0;
    // l1^2 + l2^2 + l3^2 - l1 l2 - l2 l3 - l3 l1, summed as squared differences.
    let disc = 0.5 * ((l1 - l2).powi(2) + (l2 - l3).powi(2) + (l3 - l1).powi(2));
    let kappa = 2.0 * disc.sqrt() / (d * sum);
    if kappa == 0.0 {
        return Ok(ArcParams::straight(s));
    }
    // kappa sin(phi) and kappa cos(phi) are linear in the tendon lengths.
    let ks = (1.0 - l1 / s) / d;
    let kc = (l2 - l3) / (SQRT_3 * s * d);
    Ok(ArcParams::new(s, kappa, wrap_angle(ks.atan2(kc))))
}

/// Distance from either end of the arc to the intersection of its end tangents.
fn half_tangent_length(s: f64, kappa: f64) -> f64 {
    let bend = kappa * s;
    if bend < SERIES_BEND {
        let k2s2 = bend * bend;
        s * (0.5 + k2s2 / 24.0 + k2s2 * k2s2 / 240.0)
    } else {
        (0.5 * bend).tan() / kappa
    }
}

/// Joint values of the virtual linkage equivalent to `arc`.
pub fn arc_to_pup(arc: &ArcParams) -> Result<PupJoints> {
    arc.validate()?;
    let bend = arc.bend();
    if bend >= PI {
        return Err(Error::BendDomain { bend });
    }
    let l = half_tangent_length(arc.s, arc.kappa);
    Ok(PupJoints {
        q1: arc.phi,
        q2: l,
        q3: bend,
        q4: l,
        q5: -arc.phi,
    })
}

/// Base-to-tip transform of one section through the virtual linkage.
pub fn section_forward(arc: &ArcParams) -> Result<RigidTransform> {
    Ok(arc_to_pup(arc)?.forward())
}

/// Base-to-tip transform of one section from the arc equations directly.
pub fn pcc_closed_form(arc: &ArcParams) -> Result<RigidTransform> {
    arc.validate()?;
    let bend = arc.bend();
    let (sp, cp) = arc.phi.sin_cos();
    let (st, ct) = bend.sin_cos();
    let translation = if arc.kappa == 0.0 {
        Vector3::new(0.0, 0.0, arc.s)
    } else {
        // 1 - cos(b) == 2 sin^2(b/2), without cancellation near b = 0.
        let half = (0.5 * bend).sin();
        let radial = 2.0 * half * half / arc.kappa;
        Vector3::new(radial * cp, radial * sp, st / arc.kappa)
    };
    let vc = 1.0 - ct;
    let rotation = Matrix3::new(
        ct + vc * sp * sp,
        -vc * sp * cp,
        st * cp,
        -vc * sp * cp,
        ct + vc * cp * cp,
        st * sp,
        -st * cp,
        -st * sp,
        ct,
    );
    Ok(RigidTransform::new(rotation, translation))
}

/// World-frame tip transform of every section, base to end effector.
pub fn robot_forward(config: &RobotConfig, arcs: &[ArcParams]) -> Result<Vec<RigidTransform>> {
    config.check_len(arcs.len())?;
    let mut frame = config.base;
    arcs.iter()
        .enumerate()
        .map(|(i, arc)| {
            frame = frame * section_forward(arc).map_err(|e| e.in_section(i))?;
            Ok(frame)
        })
        .collect()
}

/// Arc parameters of every section from its tendon lengths.
pub fn arcs_from_cables(config: &RobotConfig, cables: &[CableLengths]) -> Result<Vec<ArcParams>> {
    config.check_len(cables.len())?;
    cables
        .iter()
        .zip(&config.sections)
        .enumerate()
        .map(|(i, (c, spec))| cables_to_arc(c, spec.d).map_err(|e| e.in_section(i)))
        .collect()
}

/// Tendon lengths of every section.
pub fn cables_from_arcs(config: &RobotConfig, arcs: &[ArcParams]) -> Result<Vec<CableLengths>> {
    config.check_len(arcs.len())?;
    arcs.iter()
        .zip(&config.sections)
        .enumerate()
        .map(|(i, (a, spec))| arc_to_cables(a, spec.d).map_err(|e| e.in_section(i)))
        .collect()
}

/// World-frame tip positions for a tendon state.
pub fn tips_from_cables(
    config: &RobotConfig,
    cables: &[CableLengths],
) -> Result<Vec<Vector3<f64>>> {
    let arcs = arcs_from_cables(config, cables)?;
    Ok(robot_forward(config, &arcs)?
        .iter()
        .map(|t| t.translation)
        .collect())
}

/// How robot Jacobians are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum JacobianMethod {
    #[default]
    Analytic,
    /// Central differences of the forward kinematics with the given step (mm).
    CentralDifference { step: f64 },
}

// Coefficient functions of the arc exponential, written in a = theta^2:
// sinc(theta) = sin(t)/t, cosc(theta) = (1 - cos t)/t^2, and their
// derivatives divided by theta.
struct ArcCoefficients {
    sinc: f64,
    cosc: f64,
    dsinc: f64,
    dcosc: f64,
}

impl ArcCoefficients {
    fn new(a: f64) -> Self {
        if a < 0.25 {
            let mut sinc = 0.0;
            let mut cosc = 0.0;
            let mut dsinc = 0.0;
            let mut dcosc = 0.0;
            let mut prev = 0.0; // (-a)^(n-1)
            let mut pow = 1.0; // (-a)^n
            let mut fact = 1.0; // (2n+1)!
            for n in 0..10u32 {
                let n2 = f64::from(2 * n);
                if n > 0 {
                    fact *= n2 * (n2 + 1.0);
                }
                sinc += pow / fact;
                cosc += pow / (fact * (n2 + 2.0));
                // d/da (-a)^n = -n (-a)^(n-1); the factor 2 turns d/da into d/dtheta / theta.
                let dpow = -2.0 * f64::from(n) * prev;
                dsinc += dpow / fact;
                dcosc += dpow / (fact * (n2 + 2.0));
                prev = pow;
                pow *= -a;
            }
            Self {
                sinc,
                cosc,
                dsinc,
                dcosc,
            }
        } else {
            let t = a.sqrt();
            let (st, ct) = t.sin_cos();
            let half = (0.5 * t).sin();
            let one_minus_cos = 2.0 * half * half;
            Self {
                sinc: st / t,
                cosc: one_minus_cos / a,
                dsinc: (t * ct - st) / (a * t),
                dcosc: (t * st - 2.0 * one_minus_cos) / (a * a),
            }
        }
    }
}

/// Section tip transform and its derivatives with respect to the bending
/// coordinates `(s, u, v) = (s, kappa cos phi, kappa sin phi)`.
pub(crate) struct SectionDifferential {
    pub transform: RigidTransform,
    pub d_translation: [Vector3<f64>; 3],
    pub d_rotation: [Matrix3<f64>; 3],
}

pub(crate) fn section_differential(s: f64, u: f64, v: f64) -> SectionDifferential {
    let a = s * s * (u * u + v * v);
    let c = ArcCoefficients::new(a);
    let da = [2.0 * s * (u * u + v * v), 2.0 * s * s * u, 2.0 * s * s * v];

    let translation = Vector3::new(s * s * c.cosc * u, s * s * c.cosc * v, s * c.sinc);
    let w = Vector3::new(-s * v, s * u, 0.0);
    let wx = skew(&w);
    let wx2 = wx * wx;
    let rotation = Matrix3::identity() + wx * c.sinc + wx2 * c.cosc;

    let dw = [
        Vector3::new(-v, u, 0.0),
        Vector3::new(0.0, s, 0.0),
        Vector3::new(-s, 0.0, 0.0),
    ];
    let mut d_translation = [Vector3::zeros(); 3];
    let mut d_rotation = [Matrix3::zeros(); 3];
    for k in 0..3 {
        let dc = 0.5 * c.dcosc * da[k];
        let ds = 0.5 * c.dsinc * da[k];
        let (ds_s, du, dv) = match k {
            0 => (1.0, 0.0, 0.0),
            1 => (0.0, 1.0, 0.0),
            _ => (0.0, 0.0, 1.0),
        };
        d_translation[k] = Vector3::new(
            2.0 * s * ds_s * c.cosc * u + s * s * (dc * u + c.cosc * du),
            2.0 * s * ds_s * c.cosc * v + s * s * (dc * v + c.cosc * dv),
            ds_s * c.sinc + s * ds,
        );
        let dwx = skew(&dw[k]);
        d_rotation[k] = wx * ds + dwx * c.sinc + wx2 * dc + (dwx * wx + wx * dwx) * c.cosc;
    }
    SectionDifferential {
        transform: RigidTransform::new(rotation, translation),
        d_translation,
        d_rotation,
    }
}

/// Derivative of `(s, u, v)` with respect to `(l1, l2, l3)`; row k is coordinate k.
fn bending_wrt_cables(cables: &CableLengths, d: f64) -> Matrix3<f64> {
    let CableLengths { l1, l2, l3 } = *cables;
    let s = (l1 + l2 + l3) / 3.0;
    let third = 1.0 / 3.0;
    let du_base = 1.0 / (SQRT_3 * s * d);
    let du_s = -(l2 - l3) / (SQRT_3 * d * s * s) * third;
    let dv_s = l1 / (d * s * s) * third;
    Matrix3::new(
        third,
        third,
        third,
        du_s,
        du_base + du_s,
        -du_base + du_s,
        -1.0 / (s * d) + dv_s,
        dv_s,
        dv_s,
    )
}

fn bending_from_cables(cables: &CableLengths, d: f64) -> (f64, f64, f64) {
    let CableLengths { l1, l2, l3 } = *cables;
    let s = (l1 + l2 + l3) / 3.0;
    (s, (l2 - l3) / (SQRT_3 * s * d), (1.0 - l1 / s) / d)
}

fn check_cables(config: &RobotConfig, cables: &[CableLengths]) -> Result<()> {
    config.check_len(cables.len())?;
    for (i, c) in cables.iter().enumerate() {
        let ok = c.as_array().iter().all(|l| l.is_finite() && *l > 0.0);
        if !ok {
            return Err(
                Error::InvalidArc(format!("cable lengths must be positive, got {c:?}"))
                    .in_section(i),
            );
        }
    }
    Ok(())
}

/// Jacobian blocks of every tip: entry `i` maps the stacked tendon rates of
/// sections `0..=i` to the world-frame linear velocity of tip `i` (3 x 3(i+1)).
pub fn tip_jacobians(config: &RobotConfig, cables: &[CableLengths]) -> Result<Vec<DMatrix<f64>>> {
    check_cables(config, cables)?;
    let n = cables.len();
    let diffs: Vec<SectionDifferential> = cables
        .iter()
        .zip(&config.sections)
        .map(|(c, spec)| {
            let (s, u, v) = bending_from_cables(c, spec.d);
            section_differential(s, u, v)
        })
        .collect();
    let chain: Vec<Matrix3<f64>> = cables
        .iter()
        .zip(&config.sections)
        .map(|(c, spec)| bending_wrt_cables(c, spec.d))
        .collect();

    // frames[k] is the world frame at the base of section k; frames[n] the end effector.
    let mut frames = Vec::with_capacity(n + 1);
    frames.push(config.base);
    for diff in &diffs {
        let last = *frames.last().unwrap();
        frames.push(last * diff.transform);
    }

    let mut blocks = Vec::with_capacity(n);
    for tip in 0..n {
        let p_tip = frames[tip + 1].translation;
        let mut block = DMatrix::zeros(3, 3 * (tip + 1));
        for j in 0..=tip {
            let parent = &frames[j];
            let child = &frames[j + 1];
            // Tip position in section j's tip frame.
            let r = child.rotation.transpose() * (p_tip - child.translation);
            let mut d_bend = Matrix3::zeros();
            for k in 0..3 {
                let col =
                    parent.rotation * (diffs[j].d_translation[k] + diffs[j].d_rotation[k] * r);
                d_bend.set_column(k, &col);
            }
            let d_cables = d_bend * chain[j];
            block.view_mut((0, 3 * j), (3, 3)).copy_from(&d_cables);
        }
        blocks.push(block);
    }
    Ok(blocks)
}

/// Maps the stacked tendon rates of sections `0..=tip` to the world-frame linear
/// velocity of that tip. The result is `3 x 3(tip+1)`.
pub fn robot_jacobian(
    config: &RobotConfig,
    cables: &[CableLengths],
    tip: usize,
) -> Result<DMatrix<f64>> {
    if tip >= cables.len() {
        return Err(Error::InvalidConfig(format!(
            "tip index {tip} out of range for {} sections",
            cables.len()
        )));
    }
    let mut blocks = tip_jacobians(config, cables)?;
    Ok(blocks.swap_remove(tip))
}

/// Tip Jacobians by central differences of [`tips_from_cables`].
pub fn tip_jacobians_fd(
    config: &RobotConfig,
    cables: &[CableLengths],
    step: f64,
) -> Result<Vec<DMatrix<f64>>> {
    check_cables(config, cables)?;
    let n = cables.len();
    let mut flat = flatten_cables(cables);
    let mut blocks: Vec<DMatrix<f64>> = (0..n).map(|i| DMatrix::zeros(3, 3 * (i + 1))).collect();
    for col in 0..3 * n {
        let orig = flat[col];
        flat[col] = orig + step;
        let plus = tips_from_cables(config, &unflatten_cables(&flat)?)?;
        flat[col] = orig - step;
        let minus = tips_from_cables(config, &unflatten_cables(&flat)?)?;
        flat[col] = orig;
        for (tip, block) in blocks.iter_mut().enumerate() {
            if col < 3 * (tip + 1) {
                let d = (plus[tip] - minus[tip]) / (2.0 * step);
                block.set_column(col, &d);
            }
        }
    }
    Ok(blocks)
}

/// Tip Jacobians with the selected evaluation method.
pub fn tip_jacobians_with(
    config: &RobotConfig,
    cables: &[CableLengths],
    method: JacobianMethod,
) -> Result<Vec<DMatrix<f64>>> {
    match method {
        JacobianMethod::Analytic => tip_jacobians(config, cables),
        JacobianMethod::CentralDifference { step } => tip_jacobians_fd(config, cables, step),
    }
}
