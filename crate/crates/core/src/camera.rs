//! Pinhole cameras and the lift/project pair every reprojection is built on.
//!
//! Conventions: camera frame is x right, y down, z forward. Pixel centers sit
//! at integer coordinates, so pixel `(row, col)` is the continuous point
//! `(col, row)` and the image covers `[-0.5, width - 0.5) x [-0.5, height - 0.5)`.
//! `rotation` and `translation` map world points into the camera frame.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Points closer to the image plane than this are treated as behind the camera.
pub const MIN_CAMERA_Z: f64 = 1e-9;

const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = CameraModel {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::invalid(format!(
                "camera size must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        let r = &self.rotation;
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(orth <= ROTATION_TOLERANCE) || !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(Error::invalid(format!(
                "rotation must be orthonormal with determinant +1 (orthogonality error {orth:e}, det {det})"
            )));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`. `up` is the world direction that
    /// should appear upward in the image (camera -y).
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        focal: f64,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look_at: eye and target coincide"));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(Error::invalid("look_at: up vector is parallel to the view direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        CameraModel::new(
            width,
            height,
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn camera_to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Camera-frame direction `K^-1 (u, v, 1)`; its z component is 1.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }

    /// Lifts a pixel at camera-frame depth `depth` to a world point.
    pub fn lift(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::invalid(format!("lift: depth must be positive, got {depth}")));
        }
        if !self.contains(pixel) {
            return Err(Error::invalid(format!(
                "lift: pixel ({}, {}) outside {}x{} image",
                pixel.x, pixel.y, self.width, self.height
            )));
        }
        Ok(self.camera_to_world(&(self.ray(pixel) * depth)))
    }

    /// Projects a world point, returning the pixel and camera-frame depth.
    pub fn project_point(&self, world: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let c = self.world_to_camera(world);
        if c.z <= MIN_CAMERA_Z {
            return Err(Error::BehindCamera { z: c.z });
        }
        Ok((self.project_camera_point(&c), c.z))
    }

    pub(crate) fn project_camera_point(&self, c: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy)
    }

    /// Derivative of the pixel position with respect to the camera-frame point.
    pub fn projection_jacobian(&self, c: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / c.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * c.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * c.y * iz * iz,
        )
    }

    /// Sub-window of this camera: same pose, principal point shifted so that
    /// pixel `(y0, x0)` of this camera becomes pixel `(0, 0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> CameraModel {
        CameraModel {
            width,
            height,
            cx: self.cx - x0 as f64,
            cy: self.cy - y0 as f64,
            ..self.clone()
        }
    }

    /// Same pose and field of view at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> CameraModel {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraModel {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: sx * (self.cx + 0.5) - 0.5,
            cy: sy * (self.cy + 0.5) - 0.5,
            ..self.clone()
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Rotation3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let rot = Rotation3::from_scaled_axis(axis * 2.0);
        CameraModel::new(
            64,
            48,
            50.0 + 100.0 * rng.random::<f64>(),
            50.0 + 100.0 * rng.random::<f64>(),
            31.5 + rng.random::<f64>() * 4.0,
            23.5 - rng.random::<f64>() * 4.0,
            *rot.matrix(),
            Vector3::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0),
        )
        .unwrap()
    }

    #[test]
    fn principal_point_lifts_onto_optical_axis() {
        let cam = CameraModel::look_at(
            Vector3::new(1.0, 2.0, -3.0),
            Vector3::new(1.0, 2.0, 5.0),
            Vector3::new(0.0, -1.0, 0.0),
            33,
            21,
            40.0,
        )
        .unwrap();
        let p = cam.lift(&Vector2::new(cam.cx, cam.cy), 1.0).unwrap();
        assert!((p - Vector3::new(1.0, 2.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn look_at_keeps_up_at_the_top_of_the_image() {
        let cam = CameraModel::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 16, 16, 16.0).unwrap();
        assert!((cam.rotation - Matrix3::identity()).norm() < 1e-15);
        let (px, _) = cam.project_point(&Vector3::new(0.0, -1.0, 4.0)).unwrap();
        assert!(px.y < cam.cy);
    }

    #[test]
    fn on_axis_point_projects_to_principal_point() {
        let cam = CameraModel::new(10, 10, 20.0, 30.0, 4.5, 4.5, Matrix3::identity(), Vector3::zeros()).unwrap();
        let (px, z) = cam.project_point(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(4.5, 4.5));
        assert_eq!(z, 2.0);
    }

    #[test]
    fn lift_rejects_bad_input() {
        let cam = CameraModel::new(10, 10, 20.0, 20.0, 4.5, 4.5, Matrix3::identity(), Vector3::zeros()).unwrap();
        assert!(matches!(cam.lift(&Vector2::new(1.0, 1.0), 0.0), Err(Error::InvalidInput(_))));
        assert!(matches!(cam.lift(&Vector2::new(1.0, 1.0), -2.0), Err(Error::InvalidInput(_))));
        assert!(matches!(cam.lift(&Vector2::new(9.6, 1.0), 1.0), Err(Error::InvalidInput(_))));
        assert!(matches!(cam.lift(&Vector2::new(1.0, -0.6), 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = CameraModel::new(10, 10, 20.0, 20.0, 4.5, 4.5, Matrix3::identity(), Vector3::zeros()).unwrap();
        assert!(matches!(cam.project_point(&Vector3::new(0.0, 0.0, -1.0)), Err(Error::BehindCamera { .. })));
        assert!(matches!(cam.project_point(&Vector3::new(1.0, 0.0, 0.0)), Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn rejects_non_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        assert!(CameraModel::new(4, 4, 1.0, 1.0, 0.0, 0.0, r, Vector3::zeros()).is_err());
        assert!(CameraModel::new(4, 4, 0.0, 1.0, 0.0, 0.0, Matrix3::identity(), Vector3::zeros()).is_err());
        assert!(CameraModel::new(0, 4, 1.0, 1.0, 0.0, 0.0, Matrix3::identity(), Vector3::zeros()).is_err());
    }

    /// Homogeneous 4x4 composition: world = [R t; 0 1]^-1 * diag(d) * K^-1.
    #[test]
    fn lift_and_project_agree_with_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let cam = random_camera(&mut rng);
            let px = Vector2::new(rng.random::<f64>() * 63.0, rng.random::<f64>() * 47.0);
            let depth = 0.1 + rng.random::<f64>() * 20.0;

            let mut k4 = Matrix4::identity();
            k4[(0, 0)] = cam.fx;
            k4[(1, 1)] = cam.fy;
            k4[(0, 2)] = cam.cx;
            k4[(1, 2)] = cam.cy;
            let mut ext = Matrix4::identity();
            ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rotation);
            ext.fixed_view_mut::<3, 1>(0, 3).copy_from(&cam.translation);
            let full = k4 * ext;
            let inv = full.try_inverse().unwrap();
            let world_h = inv * Vector4::new(px.x * depth, px.y * depth, depth, 1.0);
            let expected = world_h.xyz() / world_h.w;

            let lifted = cam.lift(&px, depth).unwrap();
            assert!((lifted - expected).norm() < 1e-9 * (1.0 + expected.norm()));

            let h = full * Vector4::new(lifted.x, lifted.y, lifted.z, 1.0);
            let (proj, z) = cam.project_point(&lifted).unwrap();
            assert!((proj - Vector2::new(h.x / h.z, h.y / h.z)).norm() < 1e-9);
            assert!((z - depth).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_rigidly_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let p = cam.lift(&Vector2::new(10.0, 20.0), 3.0).unwrap();
            let shift = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 5.0;
            let mut moved = cam.clone();
            // New center = old center + shift.
            moved.translation = cam.translation - cam.rotation * shift;
            let (a, za) = cam.project_point(&p).unwrap();
            let (b, zb) = moved.project_point(&(p + shift)).unwrap();
            assert!((a - b).norm() < 1e-9);
            assert!((za - zb).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_and_resize_keep_rays() {
        let cam = CameraModel::new(40, 30, 50.0, 50.0, 19.5, 14.5, Matrix3::identity(), Vector3::zeros()).unwrap();
        let c = cam.crop(5, 7, 10, 10);
        let w = Vector3::new(0.1, -0.05, 2.0);
        let (a, _) = cam.project_point(&w).unwrap();
        let (b, _) = c.project_point(&w).unwrap();
        assert!((a - b - Vector2::new(5.0, 7.0)).norm() < 1e-12);
        let r = cam.resized(80, 60);
        // Image corners map to image corners.
        let corner = cam.lift(&Vector2::new(-0.5, -0.5), 1.0).unwrap();
        let (rc, _) = r.project_point(&corner).unwrap();
        assert!((rc - Vector2::new(-0.5, -0.5)).norm() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn lift_project_round_trip(u in -0.5f64..63.49, v in -0.5f64..47.49, d in 0.01f64..100.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = random_camera(&mut rng);
            let p = Vector2::new(u, v);
            let w = cam.lift(&p, d).unwrap();
            let (q, z) = cam.project_point(&w).unwrap();
            proptest::prop_assert!((q - p).norm() < 1e-9);
            proptest::prop_assert!((z - d).abs() < 1e-9 * d.max(1.0));
        }
    }
}
