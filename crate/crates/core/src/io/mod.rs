//! Files and formats: float maps, 8-bit images, scene manifests, poses and
//! synthetic scenes.

pub mod manifest;
pub mod pfm;
pub mod pose;
pub mod ppm;
pub mod synth;

pub use manifest::{load_scene, load_scene_with_head, save_scene, save_scene_with_head, SceneManifest};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use pose::Pose;
pub use ppm::{decode_ppm, encode_png, encode_ppm, read_ppm, write_ppm};
pub use synth::{gen_synthetic, Preset, SyntheticScene, SyntheticSpec, TextureKind};
