//! Closed-loop episodes: plant, synthetic camera, estimator and servo law
//! advanced one control cycle at a time.

use serde::{Deserialize, Serialize};

use crate::camera::{
    add_feature_noise, backproject_features, features_from_points, Camera, FeatureVector,
    DEPTH_UNIT_MM,
};
use crate::controller::{
    advance_scenario, compute_error, control_step, split_error, ControlGains, Scenario,
};
use crate::error::Result;
use crate::estimation::{estimate_cables_from_tips, EstimatorOptions};
use crate::kinematics::RobotConfig;
use crate::log::{CycleRecord, SwitchKind, TrajectoryLog};
use crate::plant::{plant_tips, step_plant, PlantState, SimConfig};

/// Measurement noise on the observed features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Pixel noise standard deviation (px).
    pub sigma_px: f64,
    /// Depth noise standard deviation (mm).
    pub sigma_depth_mm: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn is_noiseless(&self) -> bool {
        self.sigma_px == 0.0 && self.sigma_depth_mm == 0.0
    }

    fn cycle_seed(&self, cycle: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(cycle as u64))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything needed to run an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSetup {
    pub robot: RobotConfig,
    pub camera: Camera,
    pub gains: ControlGains,
    pub sim: SimConfig,
    pub noise: NoiseConfig,
}

impl EpisodeSetup {
    pub fn new(robot: RobotConfig) -> Self {
        Self {
            robot,
            camera: Camera::default(),
            gains: ControlGains::default(),
            sim: SimConfig::default(),
            noise: NoiseConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.camera.validate()?;
        self.gains.validate()?;
        self.sim.validate()
    }
}

/// Current observation of the plant through the camera and estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub features: FeatureVector,
    pub arcs: Vec<crate::kinematics::ArcParams>,
    pub cables: Vec<crate::kinematics::CableLengths>,
}

/// Projects the plant tips, adds noise and estimates the tendon state.
pub fn observe(setup: &EpisodeSetup, state: &PlantState, cycle: usize) -> Result<Observation> {
    let tips = plant_tips(state, &setup.robot)?;
    let clean = features_from_points(&tips, &setup.camera)?;
    let features = if setup.noise.is_noiseless() {
        clean
    } else {
        add_feature_noise(
            &clean,
            setup.noise.sigma_px,
            setup.noise.sigma_depth_mm / DEPTH_UNIT_MM,
            setup.noise.cycle_seed(cycle),
        )
    };
    let observed = backproject_features(&features, &setup.camera)?;
    let options = EstimatorOptions {
        range_slack: setup.sim.estimator_slack,
    };
    let (arcs, cables) = estimate_cables_from_tips(&observed, &setup.robot, &options)?;
    Ok(Observation {
        features,
        arcs,
        cables,
    })
}

/// A closed-loop episode advanced one cycle per [`Episode::step`].
#[derive(Clone, Debug)]
pub struct Episode {
    setup: EpisodeSetup,
    scenario: Scenario,
    state: PlantState,
    index: usize,
    pending: SwitchKind,
    completed_at: Option<usize>,
    cycle: usize,
    finished: bool,
    log: TrajectoryLog,
}

impl Episode {
    /// Starts from the retracted, straight pose.
    pub fn new(setup: EpisodeSetup, scenario: Scenario) -> Result<Self> {
        let state = PlantState::retracted(&setup.robot);
        Self::with_state(setup, scenario, state)
    }

    pub fn with_state(setup: EpisodeSetup, scenario: Scenario, state: PlantState) -> Result<Self> {
        setup.validate()?;
        scenario.validate(setup.robot.num_sections())?;
        let log = TrajectoryLog::new(setup.robot.num_sections(), setup.sim.dt);
        Ok(Self {
            setup,
            scenario,
            state,
            index: 0,
            pending: SwitchKind::None,
            completed_at: None,
            cycle: 0,
            finished: false,
            log,
        })
    }

    pub fn setup(&self) -> &EpisodeSetup {
        &self.setup
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn reference_index(&self) -> usize {
        self.index
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn into_log(self) -> TrajectoryLog {
        self.log
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// True once the last reference has converged.
    pub fn is_complete(&self) -> bool {
        self.completed_at.is_some()
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    /// Forces the switch to the next reference. Returns false at the last reference.
    pub fn manual_advance(&mut self) -> bool {
        if self.index + 1 < self.scenario.references.len() {
            self.index += 1;
            self.pending = SwitchKind::Manual;
            true
        } else {
            false
        }
    }

    /// Appends references after the current ones and reopens a completed episode.
    pub fn extend_scenario(&mut self, more: Scenario) -> Result<()> {
        more.validate(self.setup.robot.num_sections())?;
        let was_complete = self.completed_at.take().is_some();
        self.scenario.references.extend(more.references);
        if was_complete {
            self.index += 1;
            self.pending = SwitchKind::Auto;
        }
        self.finished = false;
        Ok(())
    }

    /// Replaces the remaining references with `scenario`, taking effect next cycle.
    pub fn replace_scenario(&mut self, scenario: Scenario) -> Result<()> {
        scenario.validate(self.setup.robot.num_sections())?;
        self.scenario = scenario;
        self.index = 0;
        self.pending = SwitchKind::Manual;
        self.completed_at = None;
        self.finished = false;
        Ok(())
    }

    /// Runs one control cycle and returns its record; `None` once finished.
    pub fn step(&mut self) -> Result<Option<&CycleRecord>> {
        if self.finished {
            return Ok(None);
        }
        let cycle = self.cycle;
        let record = self.run_cycle().map_err(|e| e.at_cycle(cycle))?;
        self.log.records.push(record);
        self.cycle += 1;
        let held = self
            .completed_at
            .is_some_and(|c| self.cycle - c > self.setup.sim.hold_steps);
        if held || self.cycle >= self.setup.sim.max_steps {
            self.finished = true;
        }
        Ok(self.log.records.last())
    }

    fn run_cycle(&mut self) -> Result<CycleRecord> {
        let setup = &self.setup;
        let n = setup.robot.num_sections();
        let obs = observe(setup, &self.state, self.cycle)?;
        let active = &self.scenario.references[self.index];
        let reference = active.features.clone();
        let threshold = active.threshold;
        let final_reference = self.index + 1 == self.scenario.references.len();
        let error = compute_error(&obs.features, &reference)?;
        let switch = std::mem::take(&mut self.pending);
        let reference_index = self.index;

        if self.completed_at.is_none() {
            let adv = advance_scenario(&self.scenario, self.index, &error);
            if adv.switched {
                self.index = adv.index;
                self.pending = SwitchKind::Auto;
            }
            if adv.complete {
                self.completed_at = Some(self.cycle);
            }
        }

        let command = control_step(
            &obs.cables,
            &error,
            &obs.features,
            &setup.camera,
            &setup.robot,
            &setup.gains,
        )?;
        let step = step_plant(&self.state, &command.velocities, &setup.sim, &setup.robot)?;
        let record = CycleRecord {
            cycle: self.cycle,
            time: self.state.time,
            reference_index,
            threshold,
            final_reference,
            switch,
            cables: self.state.flat_cables(),
            arcs: obs.arcs,
            task_error: split_error(error.as_slice(), &reference, n - 1..n),
            configuration_error: split_error(error.as_slice(), &reference, 0..n),
            error_norm: error.norm(),
            error: error.as_slice().to_vec(),
            features: obs.features,
            reference,
            commands: command.velocities.as_slice().to_vec(),
            command_clamped: command.clamped,
            cable_clamped: step.clamped,
        };
        self.state = step.state;
        Ok(record)
    }

    /// Runs to completion (or the step cap).
    pub fn run(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }
}

/// Runs a whole episode from the retracted pose.
pub fn run_episode(setup: &EpisodeSetup, scenario: &Scenario) -> Result<TrajectoryLog> {
    let mut ep = Episode::new(setup.clone(), scenario.clone())?;
    ep.run()?;
    Ok(ep.into_log())
}
