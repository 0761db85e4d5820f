#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod camera;
pub mod config;
pub mod controller;
pub mod episode;
pub mod error;
pub mod estimation;
pub mod jacobians;
pub mod kinematics;
pub mod log;
pub mod metrics;
pub mod plant;
pub mod reference;
pub mod session;
pub mod transform;

pub use camera::{Camera, CameraIntrinsics, FeatureVector, ShapeFeature};
pub use controller::{ControlGains, ErrorVector, Scenario, ScenarioReference};
pub use episode::{run_episode, Episode, EpisodeSetup, NoiseConfig};
pub use error::{Error, Result};
pub use jacobians::{BlockDiagImageJacobian, ImageJacobianMode, ShapeJacobian};
pub use kinematics::{
    ArcParams, CableLengths, JacobianMethod, PupJoints, RobotConfig, SectionSpec,
};
pub use log::{CycleRecord, SwitchKind, TrajectoryLog};
pub use metrics::{metrics_report, MetricsReport, TransientCriterion};
pub use nalgebra;
pub use plant::{PlantState, SimConfig};
pub use transform::RigidTransform;
