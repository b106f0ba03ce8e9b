//! Rigid transforms in 3D.
//!
//! A [`Pose`] maps points from a local frame into a parent frame:
//! `p_parent = R * p_local + t`. Composition follows function composition,
//! so `a.compose(&b)` applies `b` first and then `a`.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::{Error, Result};

/// Orthonormality and determinant tolerance for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal matrices.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `yaw` radians about +z followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            c, -s, 0.0,
            s,  c, 0.0,
            0.0, 0.0, 1.0,
        );
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation from an axis-angle vector (direction = axis, norm = angle).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    /// Reads a row-major `[R | t]` 3x4 block.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self> {
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            values[0], values[1], values[2],
            values[4], values[5], values[6],
            values[8], values[9], values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).amax();
        if ortho_err > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max deviation {ortho_err:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(())
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest absolute entry-wise difference between two poses.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dr = (self.rotation - other.rotation).amax();
        let dt = (self.translation - other.translation).amax();
        dr.max(dt)
    }
}
