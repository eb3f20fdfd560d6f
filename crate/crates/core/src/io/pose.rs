//! Novel-view poses as exchanged with the CLI and the HTTP API.

use serde::{Deserialize, Serialize};

use super::manifest::{camera_from_parts, pose_parts};
use crate::camera::CameraModel;
use crate::error::{Error, Result};

/// Extrinsics plus optional resolution and intrinsics. Missing intrinsics are
/// taken from a reference camera rescaled to the requested resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Pose {
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
}

impl Pose {
    pub fn of_camera(cam: &CameraModel) -> Self {
        let (rotation, translation) = pose_parts(cam);
        Pose {
            rotation,
            translation,
            width: Some(cam.width),
            height: Some(cam.height),
            fx: Some(cam.fx),
            fy: Some(cam.fy),
            cx: Some(cam.cx),
            cy: Some(cam.cy),
        }
    }

    pub fn camera(&self, reference: &CameraModel) -> Result<CameraModel> {
        let w = self.width.unwrap_or(reference.width);
        let h = self.height.unwrap_or(reference.height);
        if w == 0 || h == 0 || w > 8192 || h > 8192 {
            return Err(Error::invalid(format!("unsupported resolution {w}x{h}")));
        }
        let base = reference.resized(w, h);
        camera_from_parts(
            &self.rotation,
            &self.translation,
            w,
            h,
            [
                self.fx.unwrap_or(base.fx),
                self.fy.unwrap_or(base.fy),
                self.cx.unwrap_or(base.cx),
                self.cy.unwrap_or(base.cy),
            ],
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad pose: {e}")))
    }
}
