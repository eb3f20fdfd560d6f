//! Layered fast path: instead of sorting fragments, every fragment is
//! dropped into one of a fixed number of global depth bins. Opacity within a
//! bin accumulates order-free as a sum of `ln(1 - alpha)`, payload and depth
//! as alpha-weighted means; the bins are then composited front to back.

use rayon::prelude::*;

use super::covariance::SplatParams;
use super::raster::{build_splats, candidate_lists, cutoff_radius, Payload, RasterStats};
use crate::camera::CameraModel;
use crate::depth_test::{build_mixture, DepthMixture};
use crate::error::{Error, Result};
use crate::scene::InputView;

pub const DEFAULT_LAYERS: usize = 10;
/// Resolution divisor of the min/max depth raster that fixes the bin range.
pub const DEPTH_RANGE_DOWNSCALE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayeredOptions {
    pub layers: usize,
    pub splat: SplatParams,
    pub cutoff: bool,
}

impl Default for LayeredOptions {
    fn default() -> Self {
        LayeredOptions {
            layers: DEFAULT_LAYERS,
            splat: SplatParams::default(),
            cutoff: true,
        }
    }
}

/// One view composited through the depth bins.
#[derive(Clone, Debug)]
pub struct LayeredView {
    pub view_id: u32,
    pub payload: Vec<Payload>,
    pub opacity: Vec<f64>,
    pub stretch: Vec<f64>,
    /// Per pixel: one `(mean depth, beta)` component per occupied bin.
    pub mixtures: Vec<DepthMixture>,
    pub stats: RasterStats,
}

/// Min/max raster of projected depths at `1/downscale` resolution.
#[derive(Clone, Debug)]
pub struct DepthRange {
    pub width: usize,
    pub height: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl DepthRange {
    pub fn build(views: &[&InputView], novel: &CameraModel, downscale: usize) -> Self {
        let w = novel.width.div_ceil(downscale.max(1));
        let h = novel.height.div_ceil(downscale.max(1));
        let low = novel.resized(w, h);
        let mut min = vec![f64::INFINITY; w * h];
        let mut max = vec![f64::NEG_INFINITY; w * h];
        for view in views {
            for p in view.point_cloud() {
                let Ok((px, z)) = low.project_point(&p) else {
                    continue;
                };
                if !low.contains(&px) {
                    continue;
                }
                let i = px.y.round() as usize * w + px.x.round() as usize;
                min[i] = min[i].min(z);
                max[i] = max[i].max(z);
            }
        }
        DepthRange { width: w, height: h, min, max }
    }

    /// Global `(near, far)` over occupied cells.
    pub fn interval(&self) -> Option<(f64, f64)> {
        let lo = self.min.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo, hi))
    }
}

#[inline]
fn bin_of(z: f64, lo: f64, hi: f64, layers: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((z - lo) / (hi - lo) * layers as f64).floor();
    b.clamp(0.0, (layers - 1) as f64) as usize
}

#[derive(Clone)]
struct Bin {
    log_t: f64,
    alpha_sum: f64,
    payload: Payload,
    depth: f64,
    stretch: f64,
}

fn empty_bin() -> Bin {
    Bin {
        log_t: 0.0,
        alpha_sum: 0.0,
        payload: Payload::zeros(),
        depth: 0.0,
        stretch: 0.0,
    }
}

/// Splats every view into `novel` through `opts.layers` depth bins.
pub fn layered_composite(views: &[&InputView], novel: &CameraModel, opts: &LayeredOptions) -> Result<Vec<LayeredView>> {
    if opts.layers < 1 {
        return Err(Error::invalid("layered compositing needs at least one layer"));
    }
    let range = DepthRange::build(views, novel, DEPTH_RANGE_DOWNSCALE);
    let (lo, hi) = range.interval().unwrap_or((1.0, 1.0));
    Ok(views.iter().map(|v| layered_view(v, novel, lo, hi, opts)).collect())
}

/// One view through the bins spanning `[near, far]`.
pub fn layered_view(view: &InputView, novel: &CameraModel, near: f64, far: f64, opts: &LayeredOptions) -> LayeredView {
    let (splats, stats) = build_splats(view, novel, &opts.splat);
    let (w, h) = (novel.width, novel.height);
    let radius = if opts.cutoff && !splats.is_empty() {
        cutoff_radius(&splats).ok()
    } else {
        None
    };
    let (offsets, cand) = candidate_lists(&splats, radius, w, h, false);
    let layers = opts.layers;
    let bins_of: Vec<usize> = splats.iter().map(|s| bin_of(s.cam_depth, near, far, layers)).collect();

    let per_pixel: Vec<(Payload, f64, f64, DepthMixture)> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let list = match &offsets {
                Some(o) => &cand[o[p]..o[p + 1]],
                None => &cand[..],
            };
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            let mut bins = vec![empty_bin(); layers];
            for &si in list {
                let s = &splats[si as usize];
                let a = s.alpha_at(x, y);
                if a <= 0.0 {
                    continue;
                }
                let b = &mut bins[bins_of[si as usize]];
                b.log_t += (-a).ln_1p();
                b.alpha_sum += a;
                b.payload += s.payload * a;
                b.depth += s.cam_depth * a;
                b.stretch += s.stretch * a;
            }
            let mut c = Payload::zeros();
            let mut t = 1.0;
            let mut stretch = 0.0;
            let mut alpha_sum = 0.0;
            let mut comps = Vec::new();
            for b in bins.iter().filter(|b| b.alpha_sum > 0.0) {
                let a = 1.0 - b.log_t.exp();
                c += b.payload / b.alpha_sum * (t * a);
                t *= 1.0 - a;
                comps.push((b.depth / b.alpha_sum, a));
                stretch += b.stretch;
                alpha_sum += b.alpha_sum;
            }
            let stretch = if alpha_sum > 0.0 { stretch / alpha_sum } else { 0.0 };
            (c, 1.0 - t, stretch, build_mixture(comps))
        })
        .collect();

    let mut out = LayeredView {
        view_id: view.id,
        payload: Vec::with_capacity(w * h),
        opacity: Vec::with_capacity(w * h),
        stretch: Vec::with_capacity(w * h),
        mixtures: Vec::with_capacity(w * h),
        stats,
    };
    for (c, a, s, m) in per_pixel {
        out.payload.push(c);
        out.opacity.push(a);
        out.stretch.push(s);
        out.mixtures.push(m);
    }
    out
}
