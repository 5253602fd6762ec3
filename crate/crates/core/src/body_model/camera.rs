use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotations::RotationMatrix;

/// Points closer to the image plane than this are treated as behind the
/// camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole camera with world-to-camera extrinsics `p = R x + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(focal: [f64; 2], principal: [f64; 2], rotation: RotationMatrix, translation: Vector3<f64>) -> Result<Self> {
        let cam = Camera {
            focal,
            principal,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::InvalidInput(format!("focal lengths must be positive, got {:?}", self.focal)));
        }
        if !self.rotation.is_valid() {
            return Err(Error::NotARotation {
                defect: self.rotation.defect(),
            });
        }
        Ok(())
    }

    /// Camera looking at `target` from `eye`, image y pointing down.
    pub fn look_at(focal: f64, principal: [f64; 2], eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye).normalize();
        let down = -Vector3::y();
        let right = down.cross(&forward).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera::new([focal, focal], principal, RotationMatrix(r), -(r * eye))
    }

    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * x + self.translation
    }

    pub fn project_point(&self, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_indexed(0, x)
    }

    fn project_indexed(&self, index: usize, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        let p = self.to_camera(x);
        if p.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { index, depth: p.z });
        }
        Ok(Vector2::new(
            self.focal[0] * p.x / p.z + self.principal[0],
            self.focal[1] * p.y / p.z + self.principal[1],
        ))
    }

    /// Projects every point; the first point behind the camera is an error.
    pub fn project(&self, points: &[Vector3<f64>]) -> Result<Vec<Vector2<f64>>> {
        points.iter().enumerate().map(|(i, p)| self.project_indexed(i, p)).collect()
    }

    /// Per-point projection; `None` for points behind the camera.
    pub fn project_each(&self, points: &[Vector3<f64>]) -> Vec<Option<Vector2<f64>>> {
        points.iter().map(|p| self.project_point(p).ok()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> Camera {
        Camera::new([1000.0, 1000.0], [500.0, 500.0], RotationMatrix::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn optical_axis() {
        assert_eq!(cam().project_point(&Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::new(500.0, 500.0));
        assert_eq!(cam().project_point(&Vector3::new(0.1, 0.0, 1.0)).unwrap(), Vector2::new(600.0, 500.0));
    }

    #[test]
    fn behind_camera_reports_index() {
        let pts = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, -1.0)];
        assert!(matches!(cam().project(&pts), Err(Error::BehindCamera { index: 1, .. })));
        assert!(cam().project_each(&pts)[1].is_none());
    }

    #[test]
    fn non_positive_focal_rejected() {
        assert!(Camera::new([0.0, 1.0], [0.0, 0.0], RotationMatrix::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let c = Camera::look_at(800.0, [320.0, 240.0], Vector3::new(0.0, 1.3, 3.0), Vector3::new(0.0, 1.3, 0.0)).unwrap();
        let px = c.project_point(&Vector3::new(0.0, 1.3, 0.0)).unwrap();
        assert!((px - Vector2::new(320.0, 240.0)).norm() < 1e-9);
        // Higher points appear higher in the image (smaller y).
        assert!(c.project_point(&Vector3::new(0.0, 1.5, 0.0)).unwrap().y < 240.0);
    }

    proptest! {
        #[test]
        fn depth_scaling_invariance(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..5.0, s in 0.1f64..10.0) {
            let p = Vector3::new(x, y, z);
            let a = cam().project_point(&p).unwrap();
            let b = cam().project_point(&(p * s)).unwrap();
            prop_assert!((a - b).norm() < 1e-9);
        }
    }
}
