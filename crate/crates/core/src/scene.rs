//! Per-view attribute maps and the scene container.

use nalgebra::{Vector2, Vector3};

use crate::camera::CameraModel;
use crate::error::{Error, Result};

/// Number of latent feature channels per input pixel.
pub const FEATURE_CHANNELS: usize = 6;

/// Row-major, channel-interleaved image of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Map::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Map {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "map data has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Map {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(self.index(row, col))
    }

    #[inline]
    pub fn vec3(&self, index: usize) -> Vector3<f64> {
        let p = self.pixel(index);
        Vector3::new(p[0], p[1], p[2])
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn check_shape(&self, width: usize, height: usize, channels: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height || self.channels != channels {
            return Err(Error::invalid(format!(
                "{what} map is {}x{}x{}, expected {}x{}x{}",
                self.width, self.height, self.channels, width, height, channels
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// One calibrated input view with its optimizable attribute maps.
///
/// Uncertainty and features are stored pre-activation: the uncertainty is
/// `exp(uncertainty_logit)` and each feature is `sigmoid(feature_logit)`.
/// Depth entries that are not finite and positive mark invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct InputView {
    pub id: u32,
    pub camera: CameraModel,
    pub color: Map,
    pub depth: Map,
    pub normal: Map,
    pub uncertainty_logit: Map,
    pub feature_logit: Map,
    pub mu: f64,
}

/// Length deviation below which a normal counts as unit.
pub const UNIT_TOLERANCE: f64 = 5e-7;

/// Uncertainty the optimizer starts from.
pub const INITIAL_UNCERTAINTY: f64 = 0.5;

impl InputView {
    /// View with default uncertainty (0.5), features (0.5) and `mu = 1`.
    pub fn new(id: u32, camera: CameraModel, color: Map, depth: Map, normal: Map) -> Result<Self> {
        let (w, h) = (camera.width, camera.height);
        let view = InputView {
            id,
            camera,
            color,
            depth,
            normal,
            uncertainty_logit: Map::filled(w, h, 1, INITIAL_UNCERTAINTY.ln()),
            feature_logit: Map::filled(w, h, FEATURE_CHANNELS, 0.0),
            mu: 1.0,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let (w, h) = (self.camera.width, self.camera.height);
        self.color.check_shape(w, h, 3, "color")?;
        self.depth.check_shape(w, h, 1, "depth")?;
        self.normal.check_shape(w, h, 3, "normal")?;
        self.uncertainty_logit.check_shape(w, h, 1, "uncertainty")?;
        self.feature_logit.check_shape(w, h, FEATURE_CHANNELS, "feature")?;
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid(format!("view {}: mu must be >= 0, got {}", self.id, self.mu)));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    #[inline]
    pub fn depth_at(&self, index: usize) -> Option<f64> {
        let d = self.depth.data[index];
        is_valid_depth(d).then_some(d)
    }

    #[inline]
    pub fn uncertainty(&self, index: usize) -> f64 {
        self.uncertainty_logit.data[index].exp()
    }

    pub fn lift_pixel(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        self.camera.lift(pixel, depth)
    }

    /// World position of pixel `index` lifted with its stored depth.
    pub fn lifted(&self, index: usize) -> Option<Vector3<f64>> {
        let d = self.depth_at(index)?;
        let (row, col) = (index / self.width(), index % self.width());
        let ray = self.camera.ray(&Vector2::new(col as f64, row as f64));
        Some(self.camera.camera_to_world(&(ray * d)))
    }

    /// All valid lifted points.
    pub fn point_cloud(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..self.camera.pixel_count()).filter_map(move |i| self.lifted(i))
    }

    /// Multiplies every normal by the reciprocal of its length (normals within
    /// [`UNIT_TOLERANCE`] of unit length are left bit-identical). Zero-length
    /// normals take the value from `previous` when given, and otherwise face
    /// the camera.
    pub fn renormalize_normals(&mut self, previous: Option<&Map>) {
        let w = self.width();
        for i in 0..self.normal.pixel_count() {
            let n = self.normal.vec3(i);
            let len = n.norm();
            let fixed = if (len - 1.0).abs() <= UNIT_TOLERANCE {
                continue;
            } else if len > 1e-12 && len.is_finite() {
                n / len
            } else {
                let fallback = previous.map(|p| p.vec3(i)).filter(|p| p.norm() > 1e-12);
                match fallback {
                    Some(p) => p.normalize(),
                    None => {
                        let ray = self.camera.ray(&Vector2::new((i % w) as f64, (i / w) as f64));
                        -(self.camera.rotation.transpose() * ray).normalize()
                    }
                }
            };
            self.normal.pixel_mut(i).copy_from_slice(fixed.as_slice());
        }
    }
}

/// `mu * color`, unclamped.
pub fn apply_harmonization(view: &InputView) -> Map {
    let mut out = view.color.clone();
    out.data.iter_mut().for_each(|v| *v *= view.mu);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub views: Vec<InputView>,
    pub background: [f64; 3],
    /// Half-support of the triangle depth distribution, in meters.
    pub depth_sigma: f64,
    pub rng_seed: u64,
}

impl Scene {
    pub fn new(views: Vec<InputView>, background: [f64; 3], depth_sigma: f64, rng_seed: u64) -> Result<Self> {
        let scene = Scene {
            views,
            background,
            depth_sigma,
            rng_seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::invalid("scene has no views"));
        }
        if !(self.depth_sigma > 0.0) || !self.depth_sigma.is_finite() {
            return Err(Error::invalid(format!("depth sigma must be positive, got {}", self.depth_sigma)));
        }
        let mut ids: Vec<u32> = self.views.iter().map(|v| v.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("view ids must be unique"));
        }
        self.views.iter().try_for_each(InputView::validate)
    }

    pub fn view(&self, id: u32) -> Option<&InputView> {
        self.views.iter().find(|v| v.id == id)
    }

    pub fn view_index(&self, id: u32) -> Option<usize> {
        self.views.iter().position(|v| v.id == id)
    }

    /// Median of all valid depth entries, used for the automatic sigma.
    pub fn median_depth(&self) -> Option<f64> {
        median_valid_depth(&self.views)
    }

    pub fn renormalize_normals(&mut self, previous: Option<&[Map]>) {
        for (i, view) in self.views.iter_mut().enumerate() {
            view.renormalize_normals(previous.and_then(|p| p.get(i)));
        }
    }
}

pub fn median_valid_depth(views: &[InputView]) -> Option<f64> {
    let mut depths: Vec<f64> = views
        .iter()
        .flat_map(|v| v.depth.data.iter().copied())
        .filter(|d| is_valid_depth(*d))
        .collect();
    if depths.is_empty() {
        return None;
    }
    let mid = depths.len() / 2;
    let (_, m, _) = depths.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Automatic depth sigma: 1% of the median valid depth.
pub fn auto_depth_sigma(views: &[InputView]) -> f64 {
    median_valid_depth(views).map_or(0.01, |m| 0.01 * m)
}
