//! Vision-only state estimation: constant-curvature arcs fitted to observed
//! section tips, converted to tendon lengths.
//!
//! Only tip positions are observed. The orientation of each intermediate frame
//! comes from the arc fitted to the preceding section.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    arc_to_cables, section_forward, wrap_angle, ArcParams, CableLengths, RobotConfig, SectionSpec,
};
use crate::transform::RigidTransform;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Fitted arc lengths up to this far (mm) outside `[s_min, s_max]` are
    /// clamped into range instead of rejected. Zero means strict.
    pub range_slack: f64,
}

/// Fits the arc through the section base (origin, tangent +z) and `tip`
/// (section base frame, mm).
pub fn fit_section_arc(
    tip: &Vector3<f64>,
    section: &SectionSpec,
    options: &EstimatorOptions,
) -> Result<ArcParams> {
    let rho = tip.x.hypot(tip.y);
    let z = tip.z;
    if rho == 0.0 && z == 0.0 {
        return Err(Error::DegenerateTip);
    }
    if !(z > 0.0) {
        return Err(Error::TipBehindBase { z });
    }
    let arc = if rho == 0.0 {
        ArcParams::straight(z)
    } else {
        let kappa = 2.0 * rho / (rho * rho + z * z);
        let bend = 2.0 * rho.atan2(z);
        ArcParams::new(bend / kappa, kappa, wrap_angle(tip.y.atan2(tip.x)))
    };
    let slack = options.range_slack.max(0.0);
    if arc.s < section.s_min - slack || arc.s > section.s_max + slack {
        return Err(Error::ArcLengthOutOfRange {
            s: arc.s,
            s_min: section.s_min,
            s_max: section.s_max,
        });
    }
    Ok(ArcParams {
        s: arc.s.clamp(section.s_min, section.s_max),
        ..arc
    })
}

/// Fits every section in turn, expressing tip `i` in the frame rebuilt from
/// the arcs already fitted to sections `0..i`.
pub fn estimate_robot_state(
    tips_world: &[Vector3<f64>],
    base: &RigidTransform,
    config: &RobotConfig,
    options: &EstimatorOptions,
) -> Result<Vec<ArcParams>> {
    if tips_world.len() != config.num_sections() {
        return Err(Error::LengthMismatch {
            expected: config.num_sections(),
            actual: tips_world.len(),
        });
    }
    let mut frame = *base;
    let mut arcs = Vec::with_capacity(tips_world.len());
    for (i, (tip, spec)) in tips_world.iter().zip(&config.sections).enumerate() {
        let local = frame.inverse().transform_point(tip);
        let arc = fit_section_arc(&local, spec, options).map_err(|e| e.in_section(i))?;
        frame = frame * section_forward(&arc).map_err(|e| e.in_section(i))?;
        arcs.push(arc);
    }
    Ok(arcs)
}

/// Tendon lengths of fitted arcs.
pub fn estimated_cables(arcs: &[ArcParams], config: &RobotConfig) -> Result<Vec<CableLengths>> {
    crate::kinematics::cables_from_arcs(config, arcs)
}

/// Convenience wrapper: tips to arcs to tendon lengths.
pub fn estimate_cables_from_tips(
    tips_world: &[Vector3<f64>],
    config: &RobotConfig,
    options: &EstimatorOptions,
) -> Result<(Vec<ArcParams>, Vec<CableLengths>)> {
    let arcs = estimate_robot_state(tips_world, &config.base, config, options)?;
    let cables = arcs
        .iter()
        .zip(&config.sections)
        .enumerate()
        .map(|(i, (a, s))| arc_to_cables(a, s.d).map_err(|e| e.in_section(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((arcs, cables))
}
