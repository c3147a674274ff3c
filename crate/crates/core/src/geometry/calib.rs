use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use super::Point3;
use crate::error::{Error, Result};

/// KITTI camera calibration.
///
/// `lidar_to_camera` maps LiDAR points into the rectified camera frame
/// (`R0_rect · Tr_velo_to_cam`); `camera_to_lidar` applies the inverses in
/// reverse order (camera → reference camera → LiDAR).
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub p2: [[f64; 4]; 3],
    pub r0_rect: [[f64; 3]; 3],
    pub tr_velo_to_cam: [[f64; 4]; 3],
    velo_to_ref: Matrix4<f64>,
    ref_to_velo: Matrix4<f64>,
    rect_inv: Matrix3<f64>,
    p2_left_inv: Matrix3<f64>,
}

impl Calibration {
    pub fn new(p2: [[f64; 4]; 3], r0_rect: [[f64; 3]; 3], tr_velo_to_cam: [[f64; 4]; 3]) -> Result<Self> {
        if p2.iter().flatten().chain(r0_rect.iter().flatten()).chain(tr_velo_to_cam.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::SingularCalibration("non-finite entry"));
        }
        let mut velo_to_ref = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                velo_to_ref[(r, c)] = tr_velo_to_cam[r][c];
            }
        }
        let rect = Matrix3::from_fn(|r, c| r0_rect[r][c]);
        let p2_left = Matrix3::from_fn(|r, c| p2[r][c]);
        let ref_to_velo = velo_to_ref
            .try_inverse()
            .ok_or(Error::SingularCalibration("Tr_velo_to_cam"))?;
        let rect_inv = rect.try_inverse().ok_or(Error::SingularCalibration("R0_rect"))?;
        let p2_left_inv = p2_left.try_inverse().ok_or(Error::SingularCalibration("P2"))?;
        Ok(Calibration {
            p2,
            r0_rect,
            tr_velo_to_cam,
            velo_to_ref,
            ref_to_velo,
            rect_inv,
            p2_left_inv,
        })
    }

    pub fn identity() -> Self {
        Self::new(
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        )
        .expect("identity calibration is invertible")
    }

    fn rect(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.r0_rect[r][c])
    }

    /// LiDAR → rectified camera.
    pub fn lidar_to_camera(&self, p: &Point3) -> Point3 {
        let r = self.velo_to_ref * Vector4::new(p[0], p[1], p[2], 1.0);
        let c = self.rect() * Vector3::new(r[0], r[1], r[2]);
        [c[0], c[1], c[2]]
    }

    /// Rectified camera → LiDAR.
    pub fn camera_to_lidar(&self, p: &Point3) -> Point3 {
        let r = self.rect_inv * Vector3::new(p[0], p[1], p[2]);
        let v = self.ref_to_velo * Vector4::new(r[0], r[1], r[2], 1.0);
        [v[0], v[1], v[2]]
    }

    /// Perspective projection of a rectified-camera point: `(u, v, depth)`
    /// with `depth` the third homogeneous component of `P2 · [p; 1]`.
    pub fn project_to_image(&self, p: &Point3) -> Result<(f64, f64, f64)> {
        let h: [f64; 3] = std::array::from_fn(|r| {
            self.p2[r][0] * p[0] + self.p2[r][1] * p[1] + self.p2[r][2] * p[2] + self.p2[r][3]
        });
        if h[2] <= 0.0 {
            return Err(Error::BehindCamera(h[2]));
        }
        Ok((h[0] / h[2], h[1] / h[2], h[2]))
    }

    /// Inverse of [`project_to_image`](Self::project_to_image): the rectified
    /// camera point whose projection is `(u, v)` at homogeneous depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3 {
        let rhs = Vector3::new(
            u * depth - self.p2[0][3],
            v * depth - self.p2[1][3],
            depth - self.p2[2][3],
        );
        let p = self.p2_left_inv * rhs;
        [p[0], p[1], p[2]]
    }

    /// LiDAR point → `(u, v, depth)`.
    pub fn lidar_to_image(&self, p: &Point3) -> Result<(f64, f64, f64)> {
        self.project_to_image(&self.lidar_to_camera(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_calibration_is_identity() {
        let c = Calibration::identity();
        let p = [1.5, -2.0, 3.25];
        assert_eq!(c.lidar_to_camera(&p), p);
        assert_eq!(c.camera_to_lidar(&p), p);
    }

    #[test]
    fn hand_perspective_divide() {
        let c = Calibration::identity();
        assert_eq!(c.project_to_image(&[1.0, 2.0, 4.0]).unwrap(), (0.25, 0.5, 4.0));
        assert_eq!(c.project_to_image(&[0.0, 0.0, 7.0]).unwrap(), (0.0, 0.0, 7.0));
        assert!(matches!(c.project_to_image(&[1.0, 1.0, 0.0]), Err(Error::BehindCamera(_))));
        assert!(c.project_to_image(&[1.0, 1.0, -2.0]).is_err());
    }

    #[test]
    fn principal_point_on_axis() {
        let c = Calibration::new(
            [[700.0, 0.0, 600.0, 0.0], [0.0, 700.0, 180.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        )
        .unwrap();
        let (u, v, d) = c.project_to_image(&[0.0, 0.0, 12.0]).unwrap();
        assert_eq!((u, v, d), (600.0, 180.0, 12.0));
        let back = c.unproject(u, v, d);
        for (a, b) in back.iter().zip([0.0, 0.0, 12.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_rectification_rejected() {
        let r = Calibration::new(
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        );
        assert!(matches!(r, Err(Error::SingularCalibration("R0_rect"))));
    }
}
