//! Synthetic eye-to-body pinhole camera and hybrid shape features.

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{robot_forward, ArcParams, RobotConfig};
use crate::transform::RigidTransform;

/// Millimetres per unit of the depth that enters the log-depth feature (metres).
pub const DEPTH_UNIT_MM: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length (px).
    pub focal: f64,
    /// Principal point (px).
    pub principal_point: [f64; 2],
    /// Image size (px).
    pub resolution: [u32; 2],
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal: 600.0,
            principal_point: [640.0, 360.0],
            resolution: [1280, 720],
        }
    }
}

/// Pinhole camera; `extrinsics` maps world points into the camera frame
/// (x right, y down, z along the optical axis).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: RigidTransform,
}

impl Default for Camera {
    /// Camera 1 m in front of the robot (world +y), level with the middle of
    /// the workspace, looking back along -y. Image x follows world x and image
    /// y follows world z, so a robot hanging along +z appears upright-down.
    fn default() -> Self {
        let camera_to_world = RigidTransform::from_position_quaternion(
            [0.0, 1000.0, 250.0],
            [
                std::f64::consts::FRAC_1_SQRT_2,
                std::f64::consts::FRAC_1_SQRT_2,
                0.0,
                0.0,
            ],
        );
        Self {
            intrinsics: CameraIntrinsics::default(),
            extrinsics: camera_to_world.inverse(),
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let CameraIntrinsics {
            focal,
            principal_point: [cx, cy],
            resolution: [w, h],
        } = self.intrinsics;
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "focal length {focal} must be positive"
            )));
        }
        if !(cx >= 0.0 && cy >= 0.0 && cx <= f64::from(w) && cy <= f64::from(h)) {
            return Err(Error::InvalidConfig(
                "principal point outside the image".into(),
            ));
        }
        if !self.extrinsics.is_proper(1e-9) {
            return Err(Error::InvalidConfig(
                "camera rotation is not a proper rotation".into(),
            ));
        }
        Ok(())
    }

    /// Camera position and orientation in the world frame.
    pub fn pose_in_world(&self) -> RigidTransform {
        self.extrinsics.inverse()
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsics.transform_point(p_world)
    }
}

/// Projection of one point: pixel coordinates and depth in metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
}

/// Projects a world point (mm) into the image.
pub fn project(p_world: &Vector3<f64>, camera: &Camera) -> Result<Projection> {
    let pc = camera.to_camera(p_world);
    if pc.z <= 0.0 || !pc.z.is_finite() {
        return Err(Error::BehindCamera { z: pc.z });
    }
    let k = &camera.intrinsics;
    Ok(Projection {
        pixel: [
            k.principal_point[0] + k.focal * pc.x / pc.z,
            k.principal_point[1] + k.focal * pc.y / pc.z,
        ],
        depth: pc.z / DEPTH_UNIT_MM,
    })
}

/// World point (mm) whose projection is `pixel` at `depth` (m).
pub fn backproject(pixel: [f64; 2], depth: f64, camera: &Camera) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::DepthTooSmall {
            depth: depth * DEPTH_UNIT_MM,
            min: 0.0,
        });
    }
    let k = &camera.intrinsics;
    let z = depth * DEPTH_UNIT_MM;
    let pc = Vector3::new(
        (pixel[0] - k.principal_point[0]) * z / k.focal,
        (pixel[1] - k.principal_point[1]) * z / k.focal,
        z,
    );
    Ok(camera.extrinsics.inverse().transform_point(&pc))
}

/// Hybrid feature of one point: pixel position plus log of metric depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFeature {
    pub x: f64,
    pub y: f64,
    pub logz: f64,
}

impl ShapeFeature {
    pub fn from_projection(p: &Projection) -> Self {
        Self {
            x: p.pixel[0],
            y: p.pixel[1],
            logz: p.depth.ln(),
        }
    }

    /// Depth in metres.
    pub fn depth(&self) -> f64 {
        self.logz.exp()
    }

    pub fn pixel(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// One feature per section tip, ordered base to end effector. Flattened as
/// `[x1, y1, logz1, x2, ...]` everywhere in the crate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<ShapeFeature>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn features(&self) -> &[ShapeFeature] {
        &self.0
    }

    pub fn end_effector(&self) -> Option<&ShapeFeature> {
        self.0.last()
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.0.len(),
            self.0.iter().flat_map(|f| [f.x, f.y, f.logz]),
        )
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(3) {
            return Err(Error::LengthMismatch {
                expected: values.len() / 3 * 3 + 3,
                actual: values.len(),
            });
        }
        Ok(Self(
            values
                .chunks_exact(3)
                .map(|c| ShapeFeature {
                    x: c[0],
                    y: c[1],
                    logz: c[2],
                })
                .collect(),
        ))
    }
}

/// Projects world points into a feature vector, tagging failures with the point index.
pub fn features_from_points(points: &[Vector3<f64>], camera: &Camera) -> Result<FeatureVector> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            project(p, camera)
                .map(|pr| ShapeFeature::from_projection(&pr))
                .map_err(|e| Error::SectionNotVisible {
                    section: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()
        .map(FeatureVector)
}

/// Features of every section tip for the given arc state.
pub fn extract_shape_features(
    config: &RobotConfig,
    arcs: &[ArcParams],
    camera: &Camera,
) -> Result<FeatureVector> {
    let tips: Vec<Vector3<f64>> = robot_forward(config, arcs)?
        .iter()
        .map(|t| t.translation)
        .collect();
    features_from_points(&tips, camera)
}

/// World points (mm) observed through a feature vector.
pub fn backproject_features(
    features: &FeatureVector,
    camera: &Camera,
) -> Result<Vec<Vector3<f64>>> {
    features
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            backproject(f.pixel(), f.depth(), camera).map_err(|e| Error::Feature {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Adds seeded Gaussian noise: `sigma_px` on pixels, `sigma_depth` (m) on depth
/// before the logarithm.
pub fn add_feature_noise(
    features: &FeatureVector,
    sigma_px: f64,
    sigma_depth: f64,
    seed: u64,
) -> FeatureVector {
    if sigma_px == 0.0 && sigma_depth == 0.0 {
        return features.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    FeatureVector(
        features
            .features()
            .iter()
            .map(|f| {
                let dx = sigma_px * std.sample(&mut rng);
                let dy = sigma_px * std.sample(&mut rng);
                let dz = sigma_depth * std.sample(&mut rng);
                // keep the noisy depth positive
                let depth = (f.depth() + dz).max(1e-6);
                ShapeFeature {
                    x: f.x + dx,
                    y: f.y + dy,
                    logz: depth.ln(),
                }
            })
            .collect(),
    )
}
