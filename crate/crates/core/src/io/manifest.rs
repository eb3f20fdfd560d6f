//! Scene directories: a `scene.json` manifest plus one file per map.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::pfm::{interleaved, planar, read_pfm, write_pfm};
use super::ppm::read_ppm;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::render::LinearHead;
use crate::scene::{auto_depth_sigma, InputView, Map, Scene, FEATURE_CHANNELS};

pub const MANIFEST_FILE: &str = "scene.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DepthSigma {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ViewEntry {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
    pub color_file: String,
    pub depth_file: String,
    pub normal_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_file: Option<String>,
    #[serde(default = "one")]
    pub mu: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SceneManifest {
    pub version: u32,
    pub background_color: [f64; 3],
    pub depth_sigma: DepthSigma,
    #[serde(default)]
    pub rng_seed: u64,
    pub views: Vec<ViewEntry>,
    /// Linear head parameters (matrix row-major, then bias), if trained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Vec<f64>>,
}

impl ViewEntry {
    pub fn camera(&self) -> Result<CameraModel> {
        camera_from_parts(&self.rotation, &self.translation, self.width, self.height, [self.fx, self.fy, self.cx, self.cy])
            .map_err(|e| Error::invalid(format!("view {}: {e}", self.id)))
    }
}

/// Builds a camera from a row-major rotation, a translation and intrinsics.
pub fn camera_from_parts(rotation: &[f64], translation: &[f64], width: usize, height: usize, k: [f64; 4]) -> Result<CameraModel> {
    if rotation.len() != 9 {
        return Err(Error::invalid(format!("rotation needs 9 numbers, got {}", rotation.len())));
    }
    if translation.len() != 3 {
        return Err(Error::invalid(format!("translation needs 3 numbers, got {}", translation.len())));
    }
    CameraModel::new(
        width,
        height,
        k[0],
        k[1],
        k[2],
        k[3],
        Matrix3::from_row_slice(rotation),
        Vector3::from_column_slice(translation),
    )
}

/// Row-major rotation and translation of a camera.
pub fn pose_parts(cam: &CameraModel) -> (Vec<f64>, Vec<f64>) {
    let r = &cam.rotation;
    let rotation = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|ij| r[ij]).collect();
    (rotation, cam.translation.iter().copied().collect())
}

pub fn read_manifest(dir: &Path) -> Result<SceneManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        let offset = line_col_offset(&text, e.line(), e.column());
        Error::parse(offset, e.to_string()).with_path(&path)
    })
}

fn line_col_offset(text: &str, line: usize, col: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + col.saturating_sub(1)
}

fn check_dims(map: &Map, entry: &ViewEntry, channels: usize, path: &Path) -> Result<()> {
    if map.width != entry.width || map.height != entry.height || map.channels != channels {
        return Err(Error::invalid(format!(
            "{}: is {}x{}x{}, manifest declares {}x{}x{}",
            path.display(),
            map.width,
            map.height,
            map.channels,
            entry.width,
            entry.height,
            channels
        )));
    }
    Ok(())
}

fn read_color(path: &Path) -> Result<Map> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        Some("pfm") => read_pfm(path),
        _ => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            message: "color files must be .ppm or .pfm".into(),
        }),
    }
}

pub fn load_view(dir: &Path, entry: &ViewEntry) -> Result<InputView> {
    let camera = entry.camera()?;
    let file = |name: &str| -> PathBuf { dir.join(name) };
    let color_path = file(&entry.color_file);
    let color = read_color(&color_path)?;
    check_dims(&color, entry, 3, &color_path)?;
    let depth_path = file(&entry.depth_file);
    let depth = read_pfm(&depth_path)?;
    check_dims(&depth, entry, 1, &depth_path)?;
    let normal_path = file(&entry.normal_file);
    let normal = read_pfm(&normal_path)?;
    check_dims(&normal, entry, 3, &normal_path)?;
    let mut view = InputView::new(entry.id, camera, color, depth, normal)?;
    if let Some(u) = &entry.uncertainty_file {
        let p = file(u);
        let m = read_pfm(&p)?;
        check_dims(&m, entry, 1, &p)?;
        view.uncertainty_logit = m;
    }
    if let Some(f) = &entry.feature_file {
        let p = file(f);
        let m = read_pfm(&p)?;
        let m = interleaved(&m, FEATURE_CHANNELS).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
        check_dims(&m, entry, FEATURE_CHANNELS, &p)?;
        view.feature_logit = m;
    }
    view.mu = entry.mu;
    view.validate()?;
    Ok(view)
}

/// Scene plus the optional trained head stored alongside it.
pub fn load_scene_with_head(dir: &Path) -> Result<(Scene, Option<LinearHead>)> {
    let manifest = read_manifest(dir)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::invalid(format!("unsupported manifest version {}", manifest.version)));
    }
    let views = manifest
        .views
        .iter()
        .map(|e| load_view(dir, e))
        .collect::<Result<Vec<_>>>()?;
    let sigma = match manifest.depth_sigma {
        DepthSigma::Value(v) => v,
        DepthSigma::Auto(_) => auto_depth_sigma(&views),
    };
    let scene = Scene::new(views, manifest.background_color, sigma, manifest.rng_seed)?;
    let head = manifest.head.as_deref().map(LinearHead::from_params).transpose()?;
    Ok((scene, head))
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    load_scene_with_head(dir).map(|(s, _)| s)
}

/// Writes every map as `f32` PFM, plus the manifest.
pub fn save_scene_with_head(scene: &Scene, head: Option<&LinearHead>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(scene.views.len());
    for v in &scene.views {
        let id = v.id;
        let names = [
            format!("color_{id}.pfm"),
            format!("depth_{id}.pfm"),
            format!("normal_{id}.pfm"),
            format!("uncertainty_{id}.pfm"),
            format!("features_{id}.pfm"),
        ];
        write_pfm(&dir.join(&names[0]), &v.color)?;
        write_pfm(&dir.join(&names[1]), &v.depth)?;
        write_pfm(&dir.join(&names[2]), &v.normal)?;
        write_pfm(&dir.join(&names[3]), &v.uncertainty_logit)?;
        write_pfm(&dir.join(&names[4]), &planar(&v.feature_logit))?;
        let (rotation, translation) = pose_parts(&v.camera);
        let [color_file, depth_file, normal_file, u, f] = names;
        entries.push(ViewEntry {
            id,
            width: v.width(),
            height: v.height(),
            fx: v.camera.fx,
            fy: v.camera.fy,
            cx: v.camera.cx,
            cy: v.camera.cy,
            rotation,
            translation,
            color_file,
            depth_file,
            normal_file,
            uncertainty_file: Some(u),
            feature_file: Some(f),
            mu: v.mu,
        });
    }
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        background_color: scene.background,
        depth_sigma: DepthSigma::Value(scene.depth_sigma),
        rng_seed: scene.rng_seed,
        views: entries,
        head: head.map(LinearHead::to_params),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    save_scene_with_head(scene, None, dir)
}
