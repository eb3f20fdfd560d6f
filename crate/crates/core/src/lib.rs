//! Differentiable multi-view point splatting.
//!
//! Calibrated input views are lifted to 3D with their depth maps and
//! re-splatted into novel views as anisotropic Gaussians, composited per
//! view, blended across views with a probabilistic depth test, and
//! optimized per view against held-out images.

pub mod camera;
pub mod depth_test;
pub mod error;
pub mod io;
pub mod optim;
pub mod render;
pub mod scene;
pub mod select;
pub mod serve;
pub mod splat;

pub use camera::CameraModel;
pub use error::{Error, Result};
pub use scene::{InputView, Map, Scene};

/// Environment variable capping worker threads (0 or unset = one per core).
pub const THREADS_ENV: &str = "SPLATVIEW_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`]. Returns the thread
/// count in effect. Only the first call in a process can change the pool.
pub fn init_threads() -> Result<usize> {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        _ => 0,
    };
    if requested > 0 {
        // Fails only when the pool was already built; keep the existing one.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(requested).build_global();
    }
    Ok(rayon::current_num_threads())
}
