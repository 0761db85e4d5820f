//! Image and shape Jacobians used by the servo law, plus damped pseudoinversion.
//!
//! The image Jacobian of a point acts on a Cartesian velocity expressed in the
//! camera axes with the third component measured *toward* the camera, so the
//! depth row `[0, 0, -1]` has the sign of the log-depth rate.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, FeatureVector, DEPTH_UNIT_MM};
use crate::error::{Error, Result};
use crate::kinematics::{tip_jacobians_with, CableLengths, JacobianMethod, RobotConfig};

/// Which point image Jacobian to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageJacobianMode {
    /// `[[f, 0, -x/z], [0, f, -y/z], [0, 0, -1]]`.
    Conventional,
    /// Like `Conventional`, but the second row scales with `1/f` instead of `f`.
    AsymmetricFocal,
    /// Rate map of `(x, y, log z)` for the toward-camera velocity, up to the
    /// common factor `1/z`: `[[f, 0, x], [0, f, y], [0, 0, -1]]`.
    #[default]
    LogDepth,
}

/// Default minimum depth (mm) accepted by the image Jacobian.
pub const DEFAULT_MIN_DEPTH_MM: f64 = 10.0;

/// 3x3 image Jacobian of one point feature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointImageJacobian {
    pub index: usize,
    pub matrix: Matrix3<f64>,
}

/// Image Jacobian of a point at pixel offset `(x, y)` from the principal point and
/// depth `z` (mm).
pub fn image_point_jacobian(
    x: f64,
    y: f64,
    z: f64,
    focal: f64,
    mode: ImageJacobianMode,
    min_depth: f64,
) -> Result<Matrix3<f64>> {
    if !(z > min_depth) {
        return Err(Error::DepthTooSmall {
            depth: z,
            min: min_depth,
        });
    }
    let m = match mode {
        ImageJacobianMode::Conventional => {
            Matrix3::new(focal, 0.0, -x / z, 0.0, focal, -y / z, 0.0, 0.0, -1.0)
        }
        ImageJacobianMode::AsymmetricFocal => {
            Matrix3::new(focal, 0.0, -x / z, 0.0, 1.0 / focal, -y / z, 0.0, 0.0, -1.0)
        }
        ImageJacobianMode::LogDepth => Matrix3::new(focal, 0.0, x, 0.0, focal, y, 0.0, 0.0, -1.0),
    };
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NonFinite("image Jacobian"))
    }
}

/// Block-diagonal stack of per-feature image Jacobians (3N x 3N).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagImageJacobian {
    pub blocks: Vec<PointImageJacobian>,
}

impl BlockDiagImageJacobian {
    pub fn dim(&self) -> usize {
        3 * self.blocks.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, b) in self.blocks.iter().enumerate() {
            m.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&b.matrix);
        }
        m
    }

    /// Damped pseudoinverse computed one 3x3 block at a time.
    pub fn pinv_blockwise(&self, mu: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, b) in self.blocks.iter().enumerate() {
            let inv = damped_pinv3(&b.matrix, mu);
            m.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&inv);
        }
        m
    }

    /// `pinv(J) * e` without forming the dense matrix.
    pub fn solve_blockwise(&self, e: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        if e.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: e.len(),
            });
        }
        let mut out = DVector::zeros(e.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let inv = damped_pinv3(&b.matrix, mu);
            let seg = inv * e.fixed_rows::<3>(3 * i);
            out.fixed_rows_mut::<3>(3 * i).copy_from(&seg);
        }
        Ok(out)
    }
}

/// Assembles the block-diagonal image Jacobian at the observed features.
pub fn block_diag_image_jacobian(
    features: &FeatureVector,
    camera: &Camera,
    mode: ImageJacobianMode,
    min_depth: f64,
) -> Result<BlockDiagImageJacobian> {
    let k = &camera.intrinsics;
    features
        .features()
        .iter()
        .enumerate()
        .map(|(index, f)| {
            let z = f.depth() * DEPTH_UNIT_MM;
            image_point_jacobian(
                f.x - k.principal_point[0],
                f.y - k.principal_point[1],
                z,
                k.focal,
                mode,
                min_depth,
            )
            .map(|matrix| PointImageJacobian { index, matrix })
            .map_err(|e| Error::Feature {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(|blocks| BlockDiagImageJacobian { blocks })
}

/// Block lower-triangular map from all tendon rates to all tip velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeJacobian {
    pub matrix: DMatrix<f64>,
}

impl ShapeJacobian {
    pub fn sections(&self) -> usize {
        self.matrix.nrows() / 3
    }

    /// The 3x3 block linking tip `row` to the tendons of section `col`.
    pub fn block(&self, row: usize, col: usize) -> Matrix3<f64> {
        self.matrix
            .fixed_view::<3, 3>(3 * row, 3 * col)
            .into_owned()
    }
}

/// Stacks the per-tip robot Jacobians; blocks right of the diagonal stay zero.
pub fn build_shape_jacobian(
    config: &RobotConfig,
    cables: &[CableLengths],
    method: JacobianMethod,
) -> Result<ShapeJacobian> {
    let blocks = tip_jacobians_with(config, cables, method)?;
    let n = blocks.len();
    let mut matrix = DMatrix::zeros(3 * n, 3 * n);
    for (i, b) in blocks.iter().enumerate() {
        matrix.view_mut((3 * i, 0), (3, b.ncols())).copy_from(b);
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shape Jacobian"));
    }
    Ok(ShapeJacobian { matrix })
}

/// Rotation taking servo-frame Cartesian velocities (camera x, camera y,
/// toward-camera) to world-frame velocities.
pub fn servo_frame_to_world(camera: &Camera) -> Matrix3<f64> {
    let mut r = camera.extrinsics.rotation.transpose();
    r.column_mut(2).neg_mut();
    r
}

/// Damped least-squares pseudoinverse.
///
/// For `mu > 0` returns `M^T (M M^T + mu^2 I)^-1` (wide or square `M`) or
/// `(M^T M + mu^2 I)^-1 M^T` (tall `M`). With `mu = 0` this is the
/// Moore-Penrose pseudoinverse, computed by SVD.
pub fn damped_pinv(m: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if mu == 0.0 {
        let eps = f64::EPSILON * (r.max(c) as f64) * m.abs().max().max(1.0);
        return m
            .clone()
            .pseudo_inverse(eps)
            .unwrap_or_else(|_| DMatrix::zeros(c, r));
    }
    let mu2 = mu * mu;
    if r <= c {
        let gram = m * m.transpose() + DMatrix::identity(r, r) * mu2;
        let inv = gram
            .cholesky()
            .map(|ch| ch.inverse())
            .expect("damped Gram matrix is positive definite");
        m.transpose() * inv
    } else {
        let gram = m.transpose() * m + DMatrix::identity(c, c) * mu2;
        let inv = gram
            .cholesky()
            .map(|ch| ch.inverse())
            .expect("damped Gram matrix is positive definite");
        inv * m.transpose()
    }
}

fn damped_pinv3(m: &Matrix3<f64>, mu: f64) -> Matrix3<f64> {
    if mu == 0.0 {
        if let Some(inv) = m.try_inverse() {
            return inv;
        }
        let d = DMatrix::from_column_slice(3, 3, m.as_slice());
        let p = damped_pinv(&d, 0.0);
        return Matrix3::from_column_slice(p.as_slice());
    }
    let gram = m * m.transpose() + Matrix3::identity() * (mu * mu);
    m.transpose()
        * gram
            .try_inverse()
            .expect("damped Gram matrix is invertible")
}
