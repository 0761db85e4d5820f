//! Live-session protocol: JSON messages that drive one episode.
//!
//! The session is a plain state machine. A transport feeds it client
//! messages between control ticks and forwards whatever it returns; it never
//! mutates the episode concurrently.

use serde::{Deserialize, Serialize};

use crate::camera::{extract_shape_features, project, Camera, FeatureVector};
use crate::config::{resolve_reference, ReferenceSpec};
use crate::controller::{Scenario, ScenarioReference};
use crate::episode::{Episode, EpisodeSetup};
use crate::error::{Error, Result};
use crate::kinematics::{arcs_from_cables, section_forward, ArcParams, RobotConfig};
use crate::log::{CycleRecord, TrajectoryLog};
use crate::metrics::{metrics_report, MetricsReport, TransientCriterion};
use crate::plant::PlantState;
use crate::reference::GeneratorOptions;

pub const SCHEMA_VERSION: u32 = 1;

/// Points per section in streamed backbone polylines.
const POLYLINE_SAMPLES: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Run the control loop on every tick.
    Start,
    /// Stop ticking; the episode is kept.
    Pause,
    /// Back to the retracted pose with the current scenario, paused.
    Reset,
    /// Force the switch to the next queued reference.
    Advance,
    /// Replace the scenario with this single reference.
    SetReference {
        reference: ReferenceSpec,
    },
    /// Append a reference to the scenario.
    QueueReference {
        reference: ReferenceSpec,
    },
    /// Run `count` cycles immediately, whether or not the loop is running.
    Step {
        #[serde(default = "one")]
        count: usize,
    },
    Status,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// The message was not valid JSON or not a known command.
    BadMessage,
    /// The target cannot be reached by an admissible shape.
    Unreachable,
    /// No obstacle-free admissible shape exists.
    Infeasible,
    /// The reference could not be built or is inconsistent with the robot.
    InvalidReference,
    /// There is no next reference to advance to.
    NoNextReference,
    /// The episode stopped on an error; reset to continue.
    EpisodeFailed,
}

/// Plant pose as seen by the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseView {
    pub features: FeatureVector,
    /// Projected backbone of every section (px).
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub cables: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    #[serde(flatten)]
    pub record: CycleRecord,
    /// Projected backbone after the cycle's plant step (px).
    pub polylines: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusMessage {
    pub running: bool,
    pub finished: bool,
    pub complete: bool,
    pub cycle: usize,
    pub reference_index: usize,
    pub references: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        schema_version: u32,
        sections: usize,
        dt: f64,
        resolution: [u32; 2],
        pose: PoseView,
    },
    State(StateMessage),
    /// The plant pose after a reset.
    Pose(PoseView),
    ReferenceSet {
        /// Index of the new reference in the scenario.
        index: usize,
        queued: bool,
        features: FeatureVector,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arcs: Option<Vec<ArcParams>>,
    },
    Error {
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        residual: Option<f64>,
    },
    EpisodeComplete {
        cycles: usize,
        complete: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metrics: Option<MetricsReport>,
    },
    Status(StatusMessage),
}

impl ServerMessage {
    fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
            residual: None,
        }
    }

    fn from_reference_error(e: &Error) -> Self {
        let (code, residual) = match e.root() {
            Error::Unreachable { residual } => (ErrorCode::Unreachable, Some(*residual)),
            Error::Infeasible => (ErrorCode::Infeasible, None),
            _ => (ErrorCode::InvalidReference, None),
        };
        ServerMessage::Error {
            code,
            message: e.to_string(),
            residual,
        }
    }
}

/// Projected backbone polylines of a robot shape.
pub fn backbone_polylines(
    config: &RobotConfig,
    arcs: &[ArcParams],
    camera: &Camera,
) -> Result<Vec<Vec<[f64; 2]>>> {
    config.check_len(arcs.len())?;
    let mut frame = config.base;
    let mut out = Vec::with_capacity(arcs.len());
    for arc in arcs {
        let mut line = Vec::with_capacity(POLYLINE_SAMPLES + 1);
        line.push(project(&frame.translation, camera)?.pixel);
        for j in 1..=POLYLINE_SAMPLES {
            let partial = ArcParams {
                s: arc.s * j as f64 / POLYLINE_SAMPLES as f64,
                ..*arc
            };
            let p = (frame * section_forward(&partial)?).translation;
            line.push(project(&p, camera)?.pixel);
        }
        frame = frame * section_forward(arc)?;
        out.push(line);
    }
    Ok(out)
}

/// One live episode and its control state.
#[derive(Clone, Debug)]
pub struct Session {
    episode: Episode,
    generator: GeneratorOptions,
    criterion: TransientCriterion,
    running: bool,
    reported: bool,
    failed: bool,
}

impl Session {
    /// Opens a session; without a scenario the robot holds its retracted pose.
    pub fn new(
        setup: EpisodeSetup,
        scenario: Option<Scenario>,
        generator: GeneratorOptions,
    ) -> Result<Self> {
        let scenario = match scenario {
            Some(s) => s,
            None => {
                let state = PlantState::retracted(&setup.robot);
                let arcs = arcs_from_cables(&setup.robot, &state.cables)?;
                let f = extract_shape_features(&setup.robot, &arcs, &setup.camera)?;
                Scenario::single(f, setup.gains.err_threshold)
            }
        };
        let criterion = TransientCriterion::for_sections(setup.robot.num_sections());
        Ok(Self {
            episode: Episode::new(setup, scenario)?,
            generator,
            criterion,
            running: false,
            reported: false,
            failed: false,
        })
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn log(&self) -> &TrajectoryLog {
        self.episode.log()
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn hello(&self) -> ServerMessage {
        let setup = self.episode.setup();
        ServerMessage::Hello {
            schema_version: SCHEMA_VERSION,
            sections: setup.robot.num_sections(),
            dt: setup.sim.dt,
            resolution: setup.camera.intrinsics.resolution,
            pose: self.pose(),
        }
    }

    fn pose(&self) -> PoseView {
        let setup = self.episode.setup();
        let state = self.episode.state();
        let arcs = arcs_from_cables(&setup.robot, &state.cables);
        let features = arcs
            .as_ref()
            .ok()
            .and_then(|a| extract_shape_features(&setup.robot, a, &setup.camera).ok())
            .unwrap_or_default();
        let polylines = arcs
            .ok()
            .and_then(|a| backbone_polylines(&setup.robot, &a, &setup.camera).ok())
            .unwrap_or_default();
        PoseView {
            features,
            polylines,
            cables: state.flat_cables(),
        }
    }

    pub fn status(&self) -> StatusMessage {
        StatusMessage {
            running: self.running,
            finished: self.episode.is_finished(),
            complete: self.episode.is_complete(),
            cycle: self.episode.cycle(),
            reference_index: self.episode.reference_index(),
            references: self.episode.scenario().references.len(),
        }
    }

    /// Parses and applies one text message.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(ErrorCode::BadMessage, e.to_string())],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Start => {
                self.running = !self.failed;
                vec![ServerMessage::Status(self.status())]
            }
            ClientMessage::Pause => {
                self.running = false;
                vec![ServerMessage::Status(self.status())]
            }
            ClientMessage::Reset => {
                let setup = self.episode.setup().clone();
                let scenario = self.episode.scenario().clone();
                match Episode::new(setup, scenario) {
                    Ok(ep) => {
                        self.episode = ep;
                        self.running = false;
                        self.reported = false;
                        self.failed = false;
                        vec![
                            ServerMessage::Pose(self.pose()),
                            ServerMessage::Status(self.status()),
                        ]
                    }
                    Err(e) => vec![ServerMessage::error(
                        ErrorCode::EpisodeFailed,
                        e.to_string(),
                    )],
                }
            }
            ClientMessage::Advance => {
                if self.episode.manual_advance() {
                    vec![ServerMessage::Status(self.status())]
                } else {
                    vec![ServerMessage::error(
                        ErrorCode::NoNextReference,
                        "already at the last reference",
                    )]
                }
            }
            ClientMessage::SetReference { reference } => self.apply_reference(&reference, false),
            ClientMessage::QueueReference { reference } => self.apply_reference(&reference, true),
            ClientMessage::Step { count } => {
                let mut out = Vec::new();
                for _ in 0..count {
                    let msgs = self.advance_cycle();
                    let stop = msgs.is_empty()
                        || msgs.iter().any(|m| !matches!(m, ServerMessage::State(_)));
                    out.extend(msgs);
                    if stop {
                        break;
                    }
                }
                out
            }
            ClientMessage::Status => vec![ServerMessage::Status(self.status())],
        }
    }

    fn apply_reference(&mut self, spec: &ReferenceSpec, queued: bool) -> Vec<ServerMessage> {
        let setup = self.episode.setup();
        let threshold = spec.threshold.unwrap_or(setup.gains.err_threshold);
        let (features, arcs) = match resolve_reference(&spec.source, setup, &self.generator) {
            Ok(r) => r,
            Err(e) => return vec![ServerMessage::from_reference_error(&e)],
        };
        let reference = ScenarioReference {
            features: features.clone(),
            threshold,
            arcs: arcs.clone(),
        };
        let scenario = Scenario {
            references: vec![reference],
        };
        let result = if queued {
            self.episode.extend_scenario(scenario)
        } else {
            self.episode.replace_scenario(scenario)
        };
        if let Err(e) = result {
            return vec![ServerMessage::from_reference_error(&e)];
        }
        self.reported = false;
        let index = if queued {
            self.episode.scenario().references.len() - 1
        } else {
            0
        };
        vec![ServerMessage::ReferenceSet {
            index,
            queued,
            features,
            arcs,
        }]
    }

    /// One control tick: runs a cycle when the loop is running.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        if self.running {
            self.advance_cycle()
        } else {
            Vec::new()
        }
    }

    fn advance_cycle(&mut self) -> Vec<ServerMessage> {
        if self.failed {
            return vec![ServerMessage::error(
                ErrorCode::EpisodeFailed,
                "the episode failed; reset to continue",
            )];
        }
        let mut out = Vec::new();
        match self.episode.step() {
            Ok(Some(record)) => {
                let record = record.clone();
                let setup = self.episode.setup();
                let polylines = arcs_from_cables(&setup.robot, &self.episode.state().cables)
                    .and_then(|a| backbone_polylines(&setup.robot, &a, &setup.camera))
                    .unwrap_or_default();
                out.push(ServerMessage::State(StateMessage { record, polylines }));
            }
            Ok(None) => {}
            Err(e) => {
                self.failed = true;
                self.running = false;
                out.push(ServerMessage::error(
                    ErrorCode::EpisodeFailed,
                    e.to_string(),
                ));
                return out;
            }
        }
        if self.episode.is_finished() && !self.reported {
            self.reported = true;
            self.running = false;
            out.push(ServerMessage::EpisodeComplete {
                cycles: self.episode.cycle(),
                complete: self.episode.is_complete(),
                metrics: metrics_report(self.episode.log(), self.criterion).ok(),
            });
        }
        out
    }
}
