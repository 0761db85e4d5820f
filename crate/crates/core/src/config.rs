//! JSON file formats for robots, cameras and scenarios.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{extract_shape_features, Camera, CameraIntrinsics, FeatureVector};
use crate::controller::{ControlGains, Scenario, ScenarioReference};
use crate::episode::{EpisodeSetup, NoiseConfig};
use crate::error::{Error, Result};
use crate::kinematics::{arcs_from_cables, ArcParams, CableLengths, RobotConfig, SectionSpec};
use crate::plant::SimConfig;
use crate::reference::{
    generate_reference, planar_target, resolve_click, ClickTarget, GeneratorOptions, PlanarTarget,
    PlaneSpec,
};
use crate::transform::RigidTransform;

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Json(format!("{}: {e}", path.display())))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Position (mm) and `[w, x, y, z]` orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub position: [f64; 3],
    #[serde(default = "identity_quaternion")]
    pub quaternion: [f64; 4],
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for PoseFile {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            quaternion: identity_quaternion(),
        }
    }
}

impl PoseFile {
    pub fn transform(&self) -> Result<RigidTransform> {
        let n = self.quaternion.iter().map(|q| q * q).sum::<f64>().sqrt();
        if !(n > 1e-12) || !n.is_finite() || self.position.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig(
                "pose needs a finite position and a nonzero quaternion".into(),
            ));
        }
        Ok(RigidTransform::from_position_quaternion(
            self.position,
            self.quaternion,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotFile {
    pub sections: Vec<SectionSpec>,
    /// Base frame in the world.
    #[serde(default)]
    pub base: PoseFile,
}

impl RobotFile {
    pub fn uniform(n: usize) -> Self {
        Self {
            sections: vec![SectionSpec::default(); n],
            base: PoseFile::default(),
        }
    }

    pub fn build(&self) -> Result<RobotConfig> {
        RobotConfig::new(self.sections.clone(), self.base.transform()?)
    }
}

/// Camera intrinsics and the camera pose in the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraFile {
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world pose; z is the optical axis, y points down in the image.
    pub pose: PoseFile,
}

impl Default for CameraFile {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            intrinsics: CameraIntrinsics::default(),
            pose: PoseFile {
                position: [0.0, 1000.0, 250.0],
                quaternion: [h, h, 0.0, 0.0],
            },
        }
    }
}

impl CameraFile {
    pub fn build(&self) -> Result<Camera> {
        let camera = Camera {
            intrinsics: self.intrinsics,
            extrinsics: self.pose.transform()?.inverse(),
        };
        camera.validate()?;
        Ok(camera)
    }
}

/// Where a reference comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Features `(x px, y px, log z)` base to tip.
    Features(Vec<[f64; 3]>),
    Arcs(Vec<ArcParams>),
    /// Tendon lengths (mm) per section.
    Cables(Vec<[f64; 3]>),
    /// Image click plus depth, through the reference generator.
    Click {
        #[serde(flatten)]
        target: ClickTarget,
        #[serde(default)]
        plane: PlaneSpec,
    },
    /// End-effector point (mm) in the base frame, through the reference generator.
    Point {
        position: [f64; 3],
        #[serde(default)]
        heading: Option<f64>,
        #[serde(default)]
        plane: PlaneSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    /// Switching threshold; the gains' default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(flatten)]
    pub source: ReferenceSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub references: Vec<ReferenceSpec>,
}

/// Everything an experiment needs apart from the scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub robot: RobotFile,
    pub camera: CameraFile,
    pub gains: ControlGains,
    pub sim: SimConfig,
    pub noise: NoiseConfig,
    pub generator: GeneratorOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            robot: RobotFile::uniform(2),
            camera: CameraFile::default(),
            gains: ControlGains::default(),
            sim: SimConfig::default(),
            noise: NoiseConfig::default(),
            generator: GeneratorOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn setup(&self) -> Result<EpisodeSetup> {
        let setup = EpisodeSetup {
            robot: self.robot.build()?,
            camera: self.camera.build()?,
            gains: self.gains,
            sim: self.sim,
            noise: self.noise,
        };
        setup.validate()?;
        Ok(setup)
    }
}

/// Features and arcs of one reference.
pub fn resolve_reference(
    source: &ReferenceSource,
    setup: &EpisodeSetup,
    generator: &GeneratorOptions,
) -> Result<(FeatureVector, Option<Vec<ArcParams>>)> {
    let robot = &setup.robot;
    let from_arcs = |arcs: Vec<ArcParams>| -> Result<(FeatureVector, Option<Vec<ArcParams>>)> {
        robot.check_len(arcs.len())?;
        let f = extract_shape_features(robot, &arcs, &setup.camera)?;
        Ok((f, Some(arcs)))
    };
    let generate =
        |target: PlanarTarget, plane: f64| -> Result<(FeatureVector, Option<Vec<ArcParams>>)> {
            let r = generate_reference(&target, plane, robot, &setup.camera, generator)?;
            Ok((r.features, Some(r.arcs)))
        };
    match source {
        ReferenceSource::Features(f) => {
            let flat: Vec<f64> = f.iter().flatten().copied().collect();
            Ok((FeatureVector::from_flat(&flat)?, None))
        }
        ReferenceSource::Arcs(arcs) => from_arcs(arcs.clone()),
        ReferenceSource::Cables(c) => {
            let cables: Vec<CableLengths> = c
                .iter()
                .map(|l| CableLengths::new(l[0], l[1], l[2]))
                .collect();
            from_arcs(arcs_from_cables(robot, &cables)?)
        }
        ReferenceSource::Click { target, plane } => {
            let (t, angle) = resolve_click(target, &setup.camera, robot, *plane)?;
            generate(t, angle)
        }
        ReferenceSource::Point {
            position,
            heading,
            plane,
        } => {
            let (t, angle) = planar_target(&(*position).into(), *plane, *heading);
            generate(t, angle)
        }
    }
}

/// Resolves every reference of a scenario file.
pub fn resolve_scenario(
    file: &ScenarioFile,
    setup: &EpisodeSetup,
    generator: &GeneratorOptions,
) -> Result<Scenario> {
    let references = file
        .references
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (features, arcs) = resolve_reference(&spec.source, setup, generator)
                .map_err(|e| Error::InvalidConfig(format!("reference {i}: {e}")))?;
            Ok(ScenarioReference {
                features,
                threshold: spec.threshold.unwrap_or(setup.gains.err_threshold),
                arcs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario { references };
    scenario.validate(setup.robot.num_sections())?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_camera_file_matches_default_camera() {
        let built = CameraFile::default().build().unwrap();
        let default = Camera::default();
        assert!((built.extrinsics.translation - default.extrinsics.translation).norm() < 1e-12);
        assert!(
            (built.extrinsics.rotation - default.extrinsics.rotation)
                .abs()
                .max()
                < 1e-15
        );
    }

    #[test]
    fn empty_object_gives_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.setup().unwrap().robot, RobotConfig::uniform(2));
    }

    #[test]
    fn scenario_sources_parse_and_resolve() {
        let text = r#"{"references": [
            {"cables": [[100, 120, 110], [130, 120, 125]], "threshold": 1.5},
            {"arcs": [{"s": 120, "kappa": 0.004, "phi": 0.3}, {"s": 100, "kappa": 0.0, "phi": 0.0}]},
            {"point": {"position": [60, 0, 230]}},
            {"click": {"pixel": [700, 300], "depth_mm": 1000}}
        ]}"#;
        let file: ScenarioFile = serde_json::from_str(text).unwrap();
        let setup = ExperimentConfig::default().setup().unwrap();
        let scenario = resolve_scenario(&file, &setup, &GeneratorOptions::default()).unwrap();
        assert_eq!(scenario.references.len(), 4);
        assert_eq!(scenario.references[0].threshold, 1.5);
        assert_eq!(scenario.references[1].threshold, setup.gains.err_threshold);
        assert!(scenario.references.iter().all(|r| r.features.len() == 2));
    }

    #[test]
    fn bad_reference_names_its_index() {
        let file: ScenarioFile =
            serde_json::from_str(r#"{"references": [{"point": {"position": [0, 0, 5000]}}]}"#)
                .unwrap();
        let setup = ExperimentConfig::default().setup().unwrap();
        let err = resolve_scenario(&file, &setup, &GeneratorOptions::default()).unwrap_err();
        assert!(err.to_string().contains("reference 0"), "{err}");
    }
}
