//! Pinhole cameras. Camera coordinates are x right, y down, z forward; the
//! world is z-up with the ground at z = 0.

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::Pose;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, horizontal field
    /// of view `fov` radians.
    pub fn with_fov(width: usize, height: usize, fov: f64) -> Self {
        Self {
            focal: width as f64 / 2.0 / (fov / 2.0).tan(),
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.focal.is_finite() || self.focal <= 0.0 {
            return Err(Error::DegenerateCamera(format!("focal length {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::DegenerateCamera(format!("image size {}x{}", self.height, self.width)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Point3<f64>,
    /// Camera-to-world rotation.
    pub rotation: UnitQuaternion<f64>,
    pub intrinsics: Intrinsics,
}

impl Camera {
    /// Camera at `eye` whose optical axis points at `target`. `up` picks the
    /// roll; the image y axis points away from it.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let f = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateCamera("eye coincides with target".into()))?;
        let r = f
            .cross(&up)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::DegenerateCamera("view direction parallel to up".into()))?;
        let d = f.cross(&r);
        Ok(Self {
            position: eye,
            rotation: basis_rotation(r, d, f),
            intrinsics,
        })
    }

    pub fn pose(&self) -> Pose {
        let q = self.rotation.quaternion();
        Pose {
            position: [self.position.x, self.position.y, self.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.position))
    }

    /// Pixel coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.focal * c.x / c.z + k.cx, k.focal * c.y / c.z + k.cy))
    }

    /// World-space direction through the center of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let k = &self.intrinsics;
        let d = Vector3::new(
            (col as f64 + 0.5 - k.cx) / k.focal,
            (row as f64 + 0.5 - k.cy) / k.focal,
            1.0,
        );
        self.rotation * d
    }
}

/// Rotation whose columns are the camera axes expressed in world frame.
pub fn basis_rotation(right: Vector3<f64>, down: Vector3<f64>, forward: Vector3<f64>) -> UnitQuaternion<f64> {
    let m = Matrix3::from_columns(&[right, down, forward]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Orientation of a camera facing heading `psi` (radians from +x towards
/// +y) in the ground plane, tilted down by `pitch` radians.
pub fn heading_rotation(psi: f64, pitch: f64) -> UnitQuaternion<f64> {
    let f = Vector3::new(psi.cos(), psi.sin(), 0.0);
    let r = Vector3::new(psi.sin(), -psi.cos(), 0.0);
    let d = Vector3::new(0.0, 0.0, -1.0);
    let (s, c) = pitch.sin_cos();
    basis_rotation(r, d * c - f * s, f * c + d * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_hits_principal_point() {
        let k = Intrinsics::with_fov(64, 48, 1.0);
        let cam = Camera::look_at(Point3::new(1.0, 2.0, 3.0), Point3::new(5.0, -1.0, 0.5), Vector3::z(), k).unwrap();
        let (u, v) = cam.project(&Point3::new(5.0, -1.0, 0.5)).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 24.0).abs() < 1e-9);
    }

    #[test]
    fn heading_zero_looks_along_x_with_image_down_along_minus_z() {
        let q = heading_rotation(0.0, 0.0);
        assert!((q * Vector3::z() - Vector3::x()).norm() < 1e-12);
        assert!((q * Vector3::y() + Vector3::z()).norm() < 1e-12);
        assert!((q * Vector3::x() + Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn degenerate_look_at_rejected() {
        let k = Intrinsics::with_fov(8, 8, 1.0);
        let p = Point3::origin();
        assert!(Camera::look_at(p, p, Vector3::z(), k).is_err());
        assert!(Camera::look_at(p, Point3::new(0.0, 0.0, -1.0), Vector3::z(), k).is_err());
        let bad = Intrinsics { focal: 0.0, ..k };
        assert!(matches!(bad.validate(), Err(Error::DegenerateCamera(_))));
    }

    #[test]
    fn pose_is_unit_quaternion() {
        let q = heading_rotation(0.7, 0.2);
        let cam = Camera {
            position: Point3::new(0.0, 0.0, 1.6),
            rotation: q,
            intrinsics: Intrinsics::with_fov(8, 8, 1.0),
        };
        let o = cam.pose().orientation;
        let n: f64 = o.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
