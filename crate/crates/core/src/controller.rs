//! Whole-body shape servo law and reference sequencing.
//!
//! Cable rates are `v = -gain * pinv(J_shape) * pinv(J_img') * e`, where the
//! image Jacobian is inverted block by block first and the resulting tip
//! velocities are rotated into the world frame before the shape Jacobian is
//! inverted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, FeatureVector, DEPTH_UNIT_MM};
use crate::error::{Error, Result};
use crate::jacobians::{
    block_diag_image_jacobian, build_shape_jacobian, damped_pinv, servo_frame_to_world,
    ImageJacobianMode, DEFAULT_MIN_DEPTH_MM,
};
use crate::kinematics::{CableLengths, JacobianMethod, RobotConfig};

/// Servo gains and limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlGains {
    /// Visual servo gain.
    pub servo_gain: f64,
    /// Damped least-squares factor applied to both pseudoinverses.
    pub damping: f64,
    /// Default switching threshold on the L2 norm of the error vector.
    pub err_threshold: f64,
    /// Per-tendon rate limit (mm/s).
    pub max_cable_speed: f64,
    pub image_mode: ImageJacobianMode,
    pub jacobian_method: JacobianMethod,
    /// Minimum feature depth (mm) accepted by the image Jacobian.
    pub min_depth: f64,
    /// Diagonal weights on `(x, y, log z)` of every feature.
    pub error_weights: [f64; 3],
    /// Keep tendons at a length limit from being driven further into it by
    /// solving for the closest admissible tip velocity.
    pub limit_aware: bool,
    /// Distance (mm) from a length limit within which a tendon counts as at it.
    pub limit_margin: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            servo_gain: 1500.0,
            damping: 1e-3,
            err_threshold: 0.5,
            max_cable_speed: 400.0,
            image_mode: ImageJacobianMode::LogDepth,
            jacobian_method: JacobianMethod::Analytic,
            min_depth: DEFAULT_MIN_DEPTH_MM,
            error_weights: [1.0; 3],
            limit_aware: true,
            limit_margin: 0.5,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.servo_gain > 0.0
            && self.damping >= 0.0
            && self.max_cable_speed > 0.0
            && self.err_threshold > 0.0
            && self.limit_margin >= 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "gains need servo_gain > 0, damping >= 0, max_cable_speed > 0, err_threshold > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Feature error `f - f*`, flattened as `[dx1, dy1, dlogz1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorVector(pub DVector<f64>);

impl ErrorVector {
    pub fn zeros(sections: usize) -> Self {
        Self(DVector::zeros(3 * sections))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// End-effector entries (the last feature).
    pub fn task(&self) -> [f64; 3] {
        let n = self.0.len();
        [self.0[n - 3], self.0[n - 2], self.0[n - 1]]
    }

    pub fn feature(&self, i: usize) -> [f64; 3] {
        [self.0[3 * i], self.0[3 * i + 1], self.0[3 * i + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

pub fn compute_error(f: &FeatureVector, f_ref: &FeatureVector) -> Result<ErrorVector> {
    if f.len() != f_ref.len() {
        return Err(Error::LengthMismatch {
            expected: f_ref.len(),
            actual: f.len(),
        });
    }
    Ok(ErrorVector(f.flatten() - f_ref.flatten()))
}

/// Image-plane (px) and depth (mm) parts of an error norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSplit {
    pub image_px: f64,
    pub depth_mm: f64,
}

/// Splits the error of the given features into pixel and depth norms, with
/// log-depth errors linearized about the reference depth.
pub fn split_error(
    error: &[f64],
    reference: &FeatureVector,
    features: std::ops::Range<usize>,
) -> ErrorSplit {
    let mut px2 = 0.0;
    let mut mm2 = 0.0;
    for i in features {
        let z_ref_mm = reference.0[i].depth() * DEPTH_UNIT_MM;
        px2 += error[3 * i].powi(2) + error[3 * i + 1].powi(2);
        mm2 += (error[3 * i + 2] * z_ref_mm).powi(2);
    }
    ErrorSplit {
        image_px: px2.sqrt(),
        depth_mm: mm2.sqrt(),
    }
}

/// Output of one control cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct CableCommand {
    /// Tendon rates (mm/s), flattened per section.
    pub velocities: DVector<f64>,
    /// True when any component hit the rate limit.
    pub clamped: bool,
    /// Tendons held still at a length limit.
    pub held: Vec<bool>,
}

/// One evaluation of the servo law at the estimated tendon state.
pub fn control_step(
    cables: &[CableLengths],
    error: &ErrorVector,
    features: &FeatureVector,
    camera: &Camera,
    config: &RobotConfig,
    gains: &ControlGains,
) -> Result<CableCommand> {
    let n = config.num_sections();
    if error.len() != 3 * n {
        return Err(Error::LengthMismatch {
            expected: 3 * n,
            actual: error.len(),
        });
    }
    if error.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("error vector"));
    }
    if error.0.iter().all(|&v| v == 0.0) {
        return Ok(CableCommand {
            velocities: DVector::zeros(3 * n),
            clamped: false,
            held: vec![false; 3 * n],
        });
    }
    let weighted = DVector::from_iterator(
        3 * n,
        error
            .0
            .iter()
            .enumerate()
            .map(|(i, e)| e * gains.error_weights[i % 3]),
    );

    let j_img = block_diag_image_jacobian(features, camera, gains.image_mode, gains.min_depth)?;
    let servo = j_img.solve_blockwise(&weighted, gains.damping)?;
    let to_world = servo_frame_to_world(camera);
    let mut tip_velocity = DVector::zeros(3 * n);
    for i in 0..n {
        let w = to_world * servo.fixed_rows::<3>(3 * i);
        tip_velocity.fixed_rows_mut::<3>(3 * i).copy_from(&w);
    }

    let j_shape = build_shape_jacobian(config, cables, gains.jacobian_method)?;
    let mut v = damped_pinv(&j_shape.matrix, gains.damping) * &tip_velocity * (-gains.servo_gain);
    let mut held = vec![false; 3 * n];
    if gains.limit_aware {
        let bounds = limit_bounds(cables, config, gains.limit_margin);
        let violates = v.iter().zip(&bounds).any(|(r, b)| match b {
            Bound::NonNegative => *r < 0.0,
            Bound::NonPositive => *r > 0.0,
            Bound::Free => false,
        });
        if violates {
            // The bounds apply to -gain * x, so they flip for x.
            let flipped: Vec<Bound> = bounds
                .iter()
                .map(|b| match b {
                    Bound::NonNegative => Bound::NonPositive,
                    Bound::NonPositive => Bound::NonNegative,
                    Bound::Free => Bound::Free,
                })
                .collect();
            let x = bounded_least_squares(&j_shape.matrix, &tip_velocity, &flipped, gains.damping);
            v = x * (-gains.servo_gain);
            for (k, bound) in bounds.iter().enumerate() {
                held[k] = *bound != Bound::Free && v[k] == 0.0;
            }
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cable command"));
    }
    let mut clamped = false;
    for x in v.iter_mut() {
        if x.abs() > gains.max_cable_speed {
            *x = x.signum() * gains.max_cable_speed;
            clamped = true;
        }
    }
    Ok(CableCommand {
        velocities: v,
        clamped,
        held,
    })
}

/// Sign restriction on one unknown of [`bounded_least_squares`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Free,
    NonNegative,
    NonPositive,
}

/// Minimizes `||a x - b||` subject to per-component sign bounds by an
/// active-set iteration; free components are never constrained.
pub fn bounded_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    bounds: &[Bound],
    mu: f64,
) -> DVector<f64> {
    let n = a.ncols();
    assert_eq!(bounds.len(), n, "one bound per unknown");
    // Flip non-positive unknowns so that every constrained unknown is non-negative.
    let flip: Vec<f64> = bounds
        .iter()
        .map(|b| if *b == Bound::NonPositive { -1.0 } else { 1.0 })
        .collect();
    let mut a = a.clone();
    for (j, f) in flip.iter().enumerate() {
        if *f < 0.0 {
            a.column_mut(j).neg_mut();
        }
    }
    let constrained: Vec<bool> = bounds.iter().map(|b| *b != Bound::Free).collect();
    let mut passive: Vec<bool> = constrained.iter().map(|c| !c).collect();
    let mut x = DVector::zeros(n);
    let tol = 1e-12 * (1.0 + a.abs().max() * b.abs().max());

    let solve = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut s = DVector::zeros(n);
        if !cols.is_empty() {
            let sub = a.select_columns(cols.iter());
            let z = damped_pinv(&sub, mu) * b;
            for (&j, v) in cols.iter().zip(z.iter()) {
                s[j] = *v;
            }
        }
        s
    };

    for _ in 0..3 * n + 3 {
        let mut s = solve(&passive);
        for _ in 0..n + 1 {
            let blocking: Vec<usize> = (0..n)
                .filter(|&j| passive[j] && constrained[j] && s[j] <= 0.0)
                .collect();
            if blocking.is_empty() {
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&j| {
                    let d = x[j] - s[j];
                    if d > 0.0 {
                        x[j] / d
                    } else {
                        0.0
                    }
                })
                .fold(1.0_f64, f64::min);
            x += (&s - &x) * alpha;
            for j in 0..n {
                if passive[j] && constrained[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            s = solve(&passive);
        }
        x = s;
        let gradient = a.transpose() * (b - &a * &x);
        let entering = (0..n)
            .filter(|&j| !passive[j] && gradient[j] > tol)
            .max_by(|&i, &j| gradient[i].total_cmp(&gradient[j]));
        match entering {
            Some(j) => passive[j] = true,
            None => break,
        }
    }
    x.component_mul_assign(&DVector::from_vec(flip));
    x
}

/// Sign bounds on the rate of every tendon at (or within `margin` of) a length limit.
fn limit_bounds(cables: &[CableLengths], config: &RobotConfig, margin: f64) -> Vec<Bound> {
    cables
        .iter()
        .zip(&config.sections)
        .flat_map(|(c, spec)| {
            c.as_array().map(|l| {
                if l <= spec.s_min + margin {
                    Bound::NonNegative
                } else if l >= spec.s_max - margin {
                    Bound::NonPositive
                } else {
                    Bound::Free
                }
            })
        })
        .collect()
}

/// Strict test `||e|| < threshold`.
pub fn check_converged(error: &ErrorVector, threshold: f64) -> bool {
    error.norm() < threshold
}

/// One reference of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReference {
    pub features: FeatureVector,
    pub threshold: f64,
    /// Arcs that generated the features, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arcs: Option<Vec<crate::kinematics::ArcParams>>,
}

/// Ordered references, switched when the error falls below each threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub references: Vec<ScenarioReference>,
}

impl Scenario {
    pub fn single(features: FeatureVector, threshold: f64) -> Self {
        Self {
            references: vec![ScenarioReference {
                features,
                threshold,
                arcs: None,
            }],
        }
    }

    pub fn validate(&self, sections: usize) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::InvalidConfig("scenario has no references".into()));
        }
        for (i, r) in self.references.iter().enumerate() {
            if !(r.threshold > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "reference {i}: threshold must be positive"
                )));
            }
            if r.features.len() != sections {
                return Err(Error::InvalidConfig(format!(
                    "reference {i}: {} features for {sections} sections",
                    r.features.len()
                )));
            }
        }
        Ok(())
    }
}

/// Result of a sequencing decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Advance {
    pub index: usize,
    /// The reference index changed.
    pub switched: bool,
    /// The last reference has converged.
    pub complete: bool,
}

/// Moves to the next reference once the current one has converged; saturates
/// at the last reference.
pub fn advance_scenario(scenario: &Scenario, index: usize, error: &ErrorVector) -> Advance {
    let last = scenario.references.len().saturating_sub(1);
    let index = index.min(last);
    let converged = check_converged(error, scenario.references[index].threshold);
    match (converged, index < last) {
        (true, true) => Advance {
            index: index + 1,
            switched: true,
            complete: false,
        },
        (true, false) => Advance {
            index,
            switched: false,
            complete: true,
        },
        (false, _) => Advance {
            index,
            switched: false,
            complete: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{extract_shape_features, ShapeFeature};
    use crate::kinematics::{arcs_from_cables, CableLengths};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn feat(v: &[f64]) -> FeatureVector {
        FeatureVector::from_flat(v).unwrap()
    }

    #[test]
    fn error_examples() {
        let f = feat(&[10.0, 20.0, 0.1]);
        let r = feat(&[4.0, 8.0, 0.05]);
        let e = compute_error(&f, &r).unwrap();
        assert!(
            (e.0[0] - 6.0).abs() < 1e-15
                && (e.0[1] - 12.0).abs() < 1e-15
                && (e.0[2] - 0.05).abs() < 1e-15
        );
        assert_eq!(compute_error(&f, &f).unwrap().norm(), 0.0);
        assert_eq!(compute_error(&r, &f).unwrap().0, -e.0);
        assert!(compute_error(&f, &feat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).is_err());
    }

    #[test]
    fn convergence_boundary_is_strict() {
        let e = ErrorVector(DVector::from_vec(vec![3.0, 4.0, 0.0]));
        assert!(check_converged(&e, 5.1));
        assert!(!check_converged(&e, 5.0));
        assert!(check_converged(&ErrorVector::zeros(1), 1e-12));
    }

    fn three_refs() -> Scenario {
        let f = feat(&[0.0, 0.0, 0.0]);
        Scenario {
            references: (0..3)
                .map(|_| ScenarioReference {
                    features: f.clone(),
                    threshold: 1.0,
                    arcs: None,
                })
                .collect(),
        }
    }

    #[test]
    fn scenario_advances_and_saturates() {
        let s = three_refs();
        let small = ErrorVector(DVector::from_vec(vec![0.1, 0.0, 0.0]));
        let big = ErrorVector(DVector::from_vec(vec![10.0, 0.0, 0.0]));
        assert_eq!(
            advance_scenario(&s, 0, &big),
            Advance {
                index: 0,
                switched: false,
                complete: false
            }
        );
        assert_eq!(
            advance_scenario(&s, 0, &small),
            Advance {
                index: 1,
                switched: true,
                complete: false
            }
        );
        assert_eq!(
            advance_scenario(&s, 2, &small),
            Advance {
                index: 2,
                switched: false,
                complete: true
            }
        );
    }

    fn bent_state() -> (RobotConfig, Vec<CableLengths>, FeatureVector) {
        let cfg = RobotConfig::uniform(2);
        let cables = vec![
            CableLengths::new(100.0, 120.0, 95.0),
            CableLengths::new(130.0, 110.0, 125.0),
        ];
        let arcs = arcs_from_cables(&cfg, &cables).unwrap();
        let f = extract_shape_features(&cfg, &arcs, &Camera::default()).unwrap();
        (cfg, cables, f)
    }

    #[test]
    fn zero_error_gives_zero_command() {
        let (cfg, cables, f) = bent_state();
        let cmd = control_step(
            &cables,
            &ErrorVector::zeros(2),
            &f,
            &Camera::default(),
            &cfg,
            &ControlGains::default(),
        )
        .unwrap();
        assert!(cmd.velocities.iter().all(|&v| v == 0.0));
        assert!(!cmd.clamped);
    }

    #[test]
    fn command_is_linear_in_gain() {
        let (cfg, cables, f) = bent_state();
        let e = ErrorVector(DVector::from_vec(vec![1.0, -2.0, 0.001, 0.5, 0.3, -0.002]));
        let g1 = ControlGains {
            max_cable_speed: 1e9,
            ..ControlGains::default()
        };
        let g2 = ControlGains {
            servo_gain: 2.0 * g1.servo_gain,
            ..g1
        };
        let v1 = control_step(&cables, &e, &f, &Camera::default(), &cfg, &g1)
            .unwrap()
            .velocities;
        let v2 = control_step(&cables, &e, &f, &Camera::default(), &cfg, &g2)
            .unwrap()
            .velocities;
        assert!((v2 - v1 * 2.0).abs().max() < 1e-9);
    }

    #[test]
    fn command_is_bounded() {
        let (cfg, cables, f) = bent_state();
        let e = ErrorVector(DVector::from_vec(vec![1e6, -1e6, 10.0, 1e6, 1e6, -10.0]));
        let gains = ControlGains::default();
        let cmd = control_step(&cables, &e, &f, &Camera::default(), &cfg, &gains).unwrap();
        assert!(cmd.clamped);
        assert!(cmd
            .velocities
            .iter()
            .all(|v| v.abs() <= gains.max_cable_speed));
    }

    #[test]
    fn nan_error_aborts() {
        let (cfg, cables, f) = bent_state();
        let e = ErrorVector(DVector::from_vec(vec![f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let r = control_step(
            &cables,
            &e,
            &f,
            &Camera::default(),
            &cfg,
            &ControlGains::default(),
        );
        assert_eq!(r, Err(Error::NonFinite("error vector")));
    }

    #[test]
    fn scenario_validation() {
        let s = three_refs();
        s.validate(1).unwrap();
        assert!(s.validate(2).is_err());
        assert!(Scenario { references: vec![] }.validate(1).is_err());
        let bad = Scenario::single(
            FeatureVector(vec![ShapeFeature {
                x: 0.0,
                y: 0.0,
                logz: 0.0,
            }]),
            0.0,
        );
        assert!(bad.validate(1).is_err());
    }

    /// Enumerates every face of the sign constraints and keeps the best feasible one.
    fn brute_force(a: &DMatrix<f64>, b: &DVector<f64>, bounds: &[Bound]) -> DVector<f64> {
        let n = a.ncols();
        let constrained: Vec<usize> = (0..n).filter(|&j| bounds[j] != Bound::Free).collect();
        let mut best = DVector::zeros(n);
        let mut best_r = f64::INFINITY;
        for mask in 0u32..(1 << constrained.len()) {
            let fixed: Vec<usize> = constrained
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &j)| j)
                .collect();
            let cols: Vec<usize> = (0..n).filter(|j| !fixed.contains(j)).collect();
            let mut x = DVector::zeros(n);
            if !cols.is_empty() {
                let z = a
                    .select_columns(cols.iter())
                    .svd(true, true)
                    .solve(b, 1e-14)
                    .unwrap();
                for (&j, v) in cols.iter().zip(z.iter()) {
                    x[j] = *v;
                }
            }
            let feasible = (0..n).all(|j| match bounds[j] {
                Bound::Free => true,
                Bound::NonNegative => x[j] >= -1e-12,
                Bound::NonPositive => x[j] <= 1e-12,
            });
            let r = (a * &x - b).norm();
            if feasible && r < best_r - 1e-12 {
                best_r = r;
                best = x;
            }
        }
        best
    }

    #[test]
    fn bounded_least_squares_examples() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let x = bounded_least_squares(&a, &b, &[Bound::NonNegative, Bound::Free], 0.0);
        assert_eq!(x.as_slice(), &[0.0, 2.0]);
        let x = bounded_least_squares(&a, &b, &[Bound::NonPositive, Bound::NonPositive], 0.0);
        assert_eq!(x.as_slice(), &[-1.0, 0.0]);
        let x = bounded_least_squares(&a, &b, &[Bound::Free, Bound::Free], 0.0);
        assert_eq!(x.as_slice(), &[-1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn bounded_least_squares_matches_enumeration(
            entries in proptest::collection::vec(-2.0f64..2.0, 36),
            rhs in proptest::collection::vec(-3.0f64..3.0, 6),
            kinds in proptest::collection::vec(0u8..3, 6),
        ) {
            let a = DMatrix::from_row_slice(6, 6, &entries) + DMatrix::identity(6, 6) * 3.0;
            let b = DVector::from_vec(rhs);
            let bounds: Vec<Bound> = kinds.iter().map(|k| [Bound::Free, Bound::NonNegative, Bound::NonPositive][*k as usize]).collect();
            let x = bounded_least_squares(&a, &b, &bounds, 0.0);
            let oracle = brute_force(&a, &b, &bounds);
            for (j, bound) in bounds.iter().enumerate() {
                match bound {
                    Bound::NonNegative => prop_assert!(x[j] >= 0.0),
                    Bound::NonPositive => prop_assert!(x[j] <= 0.0),
                    Bound::Free => {}
                }
            }
            let r = (&a * &x - &b).norm();
            let r_oracle = (&a * &oracle - &b).norm();
            prop_assert!(r <= r_oracle + 1e-9, "residual {} vs oracle {}", r, r_oracle);
        }
    }

    #[test]
    fn retracted_tendons_are_never_shortened() {
        let cfg = RobotConfig::uniform(2);
        let cables = vec![CableLengths::uniform(80.0); 2];
        let arcs = arcs_from_cables(&cfg, &cables).unwrap();
        let f = extract_shape_features(&cfg, &arcs, &Camera::default()).unwrap();
        let gains = ControlGains::default();
        for e in [
            [3.0, -1.0, 0.01, 10.0, 5.0, 0.02],
            [-20.0, 4.0, -0.05, 2.0, -30.0, 0.0],
        ] {
            let cmd = control_step(
                &cables,
                &ErrorVector(DVector::from_row_slice(&e)),
                &f,
                &Camera::default(),
                &cfg,
                &gains,
            )
            .unwrap();
            assert!(
                cmd.velocities.iter().all(|v| *v >= 0.0),
                "{:?}",
                cmd.velocities
            );
            let free = ControlGains {
                limit_aware: false,
                ..gains
            };
            let raw = control_step(
                &cables,
                &ErrorVector(DVector::from_row_slice(&e)),
                &f,
                &Camera::default(),
                &cfg,
                &free,
            )
            .unwrap();
            assert!(raw.velocities.iter().any(|v| *v < 0.0));
        }
    }
}
