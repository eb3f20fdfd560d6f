//! Analytic synthetic scenes: exact planar geometry, a world-space texture,
//! and views spread along a horizontal arc around a common target.

use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::scene::{auto_depth_sigma, InputView, Map, Scene};

/// Scene content sits around this point.
pub const TARGET: [f64; 3] = [0.0, 0.0, 4.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// One plane through the target, tilted about the x axis.
    TexturedPlane,
    /// A back wall plus a nearer wall covering the `x < 0` half.
    TwoWalls,
    /// Back wall, floor and left wall seen from inside the corner.
    BoxCorner,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textured-plane" => Ok(Preset::TexturedPlane),
            "two-walls" => Ok(Preset::TwoWalls),
            "box-corner" => Ok(Preset::BoxCorner),
            _ => Err(Error::invalid(format!(
                "unknown preset {s:?} (expected textured-plane, two-walls or box-corner)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureKind {
    Checker,
    ValueNoise,
}

impl FromStr for TextureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(TextureKind::Checker),
            "value-noise" => Ok(TextureKind::ValueNoise),
            _ => Err(Error::invalid(format!("unknown texture {s:?} (expected checker or value-noise)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub preset: Preset,
    pub width: usize,
    pub height: usize,
    pub views: usize,
    /// Total angular spread of the view arc, degrees.
    pub arc_degrees: f64,
    /// Distance from each camera to the target.
    pub radius: f64,
    /// Focal length in pixels; defaults to the image width.
    pub focal: Option<f64>,
    pub texture: TextureKind,
    /// Texture feature size in meters.
    pub texture_scale: f64,
    /// Relative standard deviation of multiplicative depth noise.
    pub depth_noise: f64,
    /// Views that receive depth noise.
    pub noisy_views: Vec<u32>,
    /// `(view id, factor)`: the view's stored colors are divided by `factor`,
    /// so the consistent harmonization coefficient is `factor`.
    pub exposure: Vec<(u32, f64)>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            preset: Preset::TexturedPlane,
            width: 64,
            height: 64,
            views: 3,
            arc_degrees: 30.0,
            radius: 4.0,
            focal: None,
            texture: TextureKind::ValueNoise,
            texture_scale: 0.5,
            depth_noise: 0.0,
            noisy_views: Vec::new(),
            exposure: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views < 1 {
            return Err(Error::invalid("synthetic scene needs at least one view"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::invalid("synthetic resolution must be at least 16x16"));
        }
        if !(self.radius > 0.0) || !(self.texture_scale > 0.0) || !(self.depth_noise >= 0.0) {
            return Err(Error::invalid("radius and texture scale must be positive, depth noise non-negative"));
        }
        if self.exposure.iter().any(|(_, f)| !(*f > 0.0)) {
            return Err(Error::invalid("exposure factors must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub scene: Scene,
    /// Ground-truth harmonization coefficient per view id (1 unless
    /// perturbed).
    pub true_mu: Vec<(u32, f64)>,
}

/// A plane `n . x = offset`, optionally restricted to `x < 0`.
#[derive(Clone, Copy, Debug)]
struct Plane {
    normal: Vector3<f64>,
    offset: f64,
    left_half_only: bool,
}

impl Plane {
    fn through(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        let normal = normal.normalize();
        Plane {
            normal,
            offset: normal.dot(&point),
            left_half_only: false,
        }
    }

    /// Ray parameter of the hit, if in front of the origin and on the plane.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.offset - self.normal.dot(origin)) / denom;
        if !(t > 1e-9) {
            return None;
        }
        if self.left_half_only && (origin + dir * t).x >= 0.0 {
            return None;
        }
        Some(t)
    }
}

fn planes(preset: Preset) -> Vec<Plane> {
    let target = Vector3::from(TARGET);
    match preset {
        Preset::TexturedPlane => {
            let tilt = 20f64.to_radians();
            vec![Plane::through(target, Vector3::new(0.0, tilt.sin(), -tilt.cos()))]
        }
        Preset::TwoWalls => {
            let mut front = Plane::through(Vector3::new(0.0, 0.0, 3.5), -Vector3::z());
            front.left_half_only = true;
            vec![Plane::through(Vector3::new(0.0, 0.0, 5.0), -Vector3::z()), front]
        }
        Preset::BoxCorner => vec![
            Plane::through(Vector3::new(0.0, 0.0, 5.5), -Vector3::z()),
            // Camera y points down, so the floor is at positive y.
            Plane::through(Vector3::new(0.0, 1.0, 0.0), -Vector3::y()),
            Plane::through(Vector3::new(-1.5, 0.0, 0.0), Vector3::x()),
        ],
    }
}

/// Nearest surface along a ray: `(t, normal facing the ray)`.
fn cast(planes: &[Plane], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    planes
        .iter()
        .filter_map(|p| p.hit(origin, dir).map(|t| (t, p.normal)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(t, n)| (t, if n.dot(dir) > 0.0 { -n } else { n }))
}

fn hash(seed: u64, a: i64, b: i64, c: i64, channel: u64) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [a as u64, b as u64, c as u64, channel] {
        x = x.wrapping_add(v).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 31;
        x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 29;
    }
    x
}

fn lattice(seed: u64, p: [i64; 3], channel: u64) -> f64 {
    (hash(seed, p[0], p[1], p[2], channel) >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinear value noise with smoothstep weights, in `[0, 1]`.
fn value_noise(seed: u64, p: &Vector3<f64>, channel: u64) -> f64 {
    let base = [p.x.floor(), p.y.floor(), p.z.floor()];
    let f = [smooth(p.x - base[0]), smooth(p.y - base[1]), smooth(p.z - base[2])];
    let b = [base[0] as i64, base[1] as i64, base[2] as i64];
    let mut acc = 0.0;
    for corner in 0..8 {
        let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for k in 0..3 {
            w *= if d[k] == 1 { f[k] } else { 1.0 - f[k] };
        }
        acc += w * lattice(seed, [b[0] + d[0] as i64, b[1] + d[1] as i64, b[2] + d[2] as i64], channel);
    }
    acc
}

pub fn texture(kind: TextureKind, scale: f64, seed: u64, p: &Vector3<f64>) -> [f64; 3] {
    let q = p / scale;
    match kind {
        TextureKind::Checker => {
            let parity = (q.x.floor() + q.y.floor() + q.z.floor()).rem_euclid(2.0);
            if parity < 1.0 {
                [0.8, 0.75, 0.3]
            } else {
                [0.2, 0.3, 0.6]
            }
        }
        TextureKind::ValueNoise => {
            let mut out = [0.0; 3];
            for (k, o) in out.iter_mut().enumerate() {
                let v = 0.7 * value_noise(seed, &q, k as u64) + 0.3 * value_noise(seed, &(q * 2.0), 3 + k as u64);
                *o = 0.15 + 0.7 * v;
            }
            out
        }
    }
}

#[inline]
fn f32q(v: f64) -> f64 {
    v as f32 as f64
}

/// Camera `index` of `count` on the arc.
pub fn arc_camera(spec: &SyntheticSpec, index: usize) -> Result<CameraModel> {
    let target = Vector3::from(TARGET);
    let phi = if spec.views > 1 {
        (-0.5 + index as f64 / (spec.views - 1) as f64) * spec.arc_degrees.to_radians()
    } else {
        0.0
    };
    let eye = target + Vector3::new(phi.sin(), 0.0, -phi.cos()) * spec.radius;
    let focal = spec.focal.unwrap_or(spec.width as f64);
    CameraModel::look_at(eye, target, -Vector3::y(), spec.width, spec.height, focal)
}

/// Ray-cast of one pixel: `(camera depth, world normal, world point)`.
pub fn cast_pixel(preset: Preset, cam: &CameraModel, pixel: &Vector2<f64>) -> Option<(f64, Vector3<f64>, Vector3<f64>)> {
    let origin = cam.center();
    let ray_cam = cam.ray(pixel);
    let dir = cam.rotation.transpose() * ray_cam;
    let (t, n) = cast(&planes(preset), &origin, &dir)?;
    // `ray` has unit z, so the ray parameter is the camera depth.
    Some((t, n, origin + dir * t))
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut views = Vec::with_capacity(spec.views);
    let mut true_mu = Vec::with_capacity(spec.views);
    for index in 0..spec.views {
        let id = index as u32;
        let cam = arc_camera(spec, index)?;
        let (w, h) = (spec.width, spec.height);
        let mut color = Map::new(w, h, 3);
        let mut depth = Map::new(w, h, 1);
        let mut normal = Map::new(w, h, 3);
        let factor = spec.exposure.iter().find(|(v, _)| *v == id).map_or(1.0, |(_, f)| *f);
        let noisy = spec.depth_noise > 0.0 && spec.noisy_views.contains(&id);
        for p in 0..w * h {
            let pixel = Vector2::new((p % w) as f64, (p / w) as f64);
            let Some((d, n, world)) = cast_pixel(spec.preset, &cam, &pixel) else {
                normal.pixel_mut(p).copy_from_slice(&[0.0, 0.0, -1.0]);
                continue;
            };
            let c = texture(spec.texture, spec.texture_scale, spec.seed, &world);
            for k in 0..3 {
                color.pixel_mut(p)[k] = f32q(c[k] / factor);
                normal.pixel_mut(p)[k] = f32q(n[k]);
            }
            let d = if noisy {
                d * (1.0 + spec.depth_noise * noise.sample(&mut rng))
            } else {
                d
            };
            depth.data[p] = f32q(d);
        }
        views.push(InputView::new(id, cam, color, depth, normal)?);
        true_mu.push((id, factor));
    }
    let sigma = auto_depth_sigma(&views);
    let scene = Scene::new(views, [0.0, 0.0, 0.0], sigma, spec.seed)?;
    Ok(SyntheticScene { scene, true_mu })
}
