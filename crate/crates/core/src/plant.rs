//! Kinematic stand-in for the tendon-driven robot.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{flatten_cables, tips_from_cables, CableLengths, RobotConfig};

/// Simulation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Control period (s).
    pub dt: f64,
    /// First-order actuator time constant (s); zero means ideal tracking.
    pub actuator_lag: f64,
    /// Episode length cap in control cycles.
    pub max_steps: usize,
    /// Cycles to keep servoing after the last reference has converged.
    pub hold_steps: usize,
    /// Arc-length slack (mm) tolerated by the estimator before it rejects a fit.
    pub estimator_slack: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            actuator_lag: 0.0,
            max_steps: 600,
            hold_steps: 20,
            estimator_slack: 25.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.actuator_lag >= 0.0 && self.max_steps > 0) {
            return Err(Error::InvalidConfig(format!(
                "sim config needs dt > 0, actuator_lag >= 0, max_steps > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Tendon lengths, actual tendon rates (used with actuator lag) and time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub cables: Vec<CableLengths>,
    pub rates: Vec<f64>,
    pub time: f64,
}

impl PlantState {
    /// Every section retracted to its minimum length, straight.
    pub fn retracted(config: &RobotConfig) -> Self {
        Self {
            cables: config
                .sections
                .iter()
                .map(|s| CableLengths::uniform(s.s_min))
                .collect(),
            rates: vec![0.0; 3 * config.num_sections()],
            time: 0.0,
        }
    }

    pub fn with_cables(cables: Vec<CableLengths>) -> Self {
        let n = cables.len();
        Self {
            cables,
            rates: vec![0.0; 3 * n],
            time: 0.0,
        }
    }

    pub fn flat_cables(&self) -> Vec<f64> {
        flatten_cables(&self.cables)
    }
}

/// Plant state after one step, with per-tendon saturation flags.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantStep {
    pub state: PlantState,
    pub clamped: Vec<bool>,
}

/// Integrates commanded tendon rates over one period and clamps to the limits.
pub fn step_plant(
    state: &PlantState,
    command: &DVector<f64>,
    sim: &SimConfig,
    config: &RobotConfig,
) -> Result<PlantStep> {
    let n = config.num_sections();
    if command.len() != 3 * n || state.cables.len() != n {
        return Err(Error::LengthMismatch {
            expected: 3 * n,
            actual: command.len(),
        });
    }
    let blend = if sim.actuator_lag > 0.0 {
        1.0 - (-sim.dt / sim.actuator_lag).exp()
    } else {
        1.0
    };
    let mut cables = state.cables.clone();
    let mut rates = state.rates.clone();
    rates.resize(3 * n, 0.0);
    let mut clamped = vec![false; 3 * n];
    for (i, (cable, spec)) in cables.iter_mut().zip(&config.sections).enumerate() {
        let mut l = cable.as_array();
        #[allow(clippy::needless_range_loop)]
        for k in 0..3 {
            let idx = 3 * i + k;
            let rate = if blend == 1.0 {
                command[idx]
            } else {
                rates[idx] + blend * (command[idx] - rates[idx])
            };
            let next = l[k] + rate * sim.dt;
            if next > spec.s_max || next < spec.s_min {
                l[k] = next.clamp(spec.s_min, spec.s_max);
                clamped[idx] = true;
                rates[idx] = 0.0;
            } else {
                l[k] = next;
                rates[idx] = rate;
            }
        }
        *cable = CableLengths::new(l[0], l[1], l[2]);
    }
    Ok(PlantStep {
        state: PlantState {
            cables,
            rates,
            time: state.time + sim.dt,
        },
        clamped,
    })
}

/// Ground-truth world-frame tip positions.
pub fn plant_tips(state: &PlantState, config: &RobotConfig) -> Result<Vec<Vector3<f64>>> {
    tips_from_cables(config, &state.cables)
}
