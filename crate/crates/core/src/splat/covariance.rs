//! Bi-directional EWA footprint of one input pixel in a novel view.
//!
//! The input pixel is lifted onto the plane through its 3D point with the
//! stored normal. `J_in` maps plane coordinates into the input image and
//! `J_out` maps them into the novel image; `M = J_out * J_in^-1` carries a
//! unit-pixel footprint from the input image to the novel image.

use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};

use crate::camera::{CameraModel, MIN_CAMERA_Z};

/// Determinants of `J_in` below this are grazing views and are skipped.
pub const MIN_INPUT_JACOBIAN_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatParams {
    /// Base footprint standard deviation in input pixels.
    pub sigma0: f64,
    /// Isotropic screen-space low-pass added to every covariance (px^2).
    pub lowpass: f64,
    /// Opacity at the splat center.
    pub alpha_peak: f64,
}

impl Default for SplatParams {
    fn default() -> Self {
        SplatParams {
            sigma0: 0.7,
            lowpass: 0.05,
            alpha_peak: 0.999,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplatSkip {
    Grazing,
    BehindCamera,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatGeometry {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub cam_depth: f64,
    /// `M = J_out * J_in^-1`.
    pub mapping: Matrix2<f64>,
}

/// Orthonormal basis of the plane with normal `n`.
pub fn tangent_basis(n: &Vector3<f64>) -> Matrix3x2<f64> {
    let n = n.normalize();
    let a = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&a).normalize();
    let t2 = n.cross(&t1);
    Matrix3x2::from_columns(&[t1, t2])
}

/// Jacobian of `plane coords -> pixel` for a camera at world point `p`.
fn plane_jacobian(cam: &CameraModel, world: &Vector3<f64>, basis: &Matrix3x2<f64>) -> Option<Matrix2<f64>> {
    let c = cam.world_to_camera(world);
    if c.z <= MIN_CAMERA_Z {
        return None;
    }
    Some(cam.projection_jacobian(&c) * cam.rotation * basis)
}

/// Footprint of the input pixel at continuous position `pixel`, lifted to
/// camera depth `depth`, on the surface with world normal `normal`.
pub fn splat_geometry(
    source: &CameraModel,
    pixel: &Vector2<f64>,
    depth: f64,
    normal: &Vector3<f64>,
    uncertainty: f64,
    novel: &CameraModel,
    params: &SplatParams,
) -> Result<SplatGeometry, SplatSkip> {
    let world = source.camera_to_world(&(source.ray(pixel) * depth));
    let cam_novel = novel.world_to_camera(&world);
    if cam_novel.z <= MIN_CAMERA_Z {
        return Err(SplatSkip::BehindCamera);
    }
    if normal.norm() < 1e-12 {
        return Err(SplatSkip::Grazing);
    }
    let basis = tangent_basis(normal);
    let j_in = plane_jacobian(source, &world, &basis).ok_or(SplatSkip::BehindCamera)?;
    let det = j_in.determinant();
    if !(det.abs() >= MIN_INPUT_JACOBIAN_DET) {
        return Err(SplatSkip::Grazing);
    }
    let j_out = novel.projection_jacobian(&cam_novel) * novel.rotation * basis;
    let j_in_inv = j_in.try_inverse().ok_or(SplatSkip::Grazing)?;
    let mapping = j_out * j_in_inv;
    Ok(SplatGeometry {
        mean: novel.project_camera_point(&cam_novel),
        cov: footprint_covariance(&mapping, uncertainty, params),
        cam_depth: cam_novel.z,
        mapping,
    })
}

/// `U * sigma0^2 * M M^T + lowpass * I`.
pub fn footprint_covariance(mapping: &Matrix2<f64>, uncertainty: f64, params: &SplatParams) -> Matrix2<f64> {
    let shape = mapping * mapping.transpose() * (params.sigma0 * params.sigma0);
    shape * uncertainty + Matrix2::identity() * params.lowpass
}
