//! Per-view splatting into a novel view with sorted front-to-back compositing.

use nalgebra::{Matrix2, SVector, Vector2, Vector3};
use rayon::prelude::*;

use super::covariance::{splat_geometry, SplatGeometry, SplatParams, SplatSkip};
use crate::camera::CameraModel;
use crate::depth_test::{build_mixture, DepthMixture};
use crate::error::{Error, Result};
use crate::scene::{sigmoid, InputView, FEATURE_CHANNELS};

/// Number of composited attributes: 3 harmonized colors + 6 features.
pub const PAYLOAD_DIM: usize = 3 + FEATURE_CHANNELS;
pub type Payload = SVector<f64, PAYLOAD_DIM>;

/// Compositing stops once the remaining transmittance falls below one
/// 8-bit gray level.
pub const TRANSMITTANCE_STOP: f64 = 1.0 / 255.0;

/// Share of the largest-variance splats ignored when sizing the cutoff.
pub const CUTOFF_OUTLIER_FRACTION: f64 = 0.03;

pub const DEFAULT_MAX_FRAGMENTS: usize = 150;

#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    pub source_view: u32,
    /// Row-major index of the source pixel.
    pub source_index: u32,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub cov_inv: Matrix2<f64>,
    pub cam_depth: f64,
    pub payload: Payload,
    pub uncertainty: f64,
    /// `sigma0^2 M M^T`, the derivative of `cov` with respect to uncertainty.
    pub shape: Matrix2<f64>,
    pub alpha_peak: f64,
    /// Eigenvalue ratio `lambda_min / lambda_max` of `cov`.
    pub stretch: f64,
}

impl Splat {
    pub fn from_geometry(
        source_view: u32,
        source_index: u32,
        geom: &SplatGeometry,
        uncertainty: f64,
        payload: Payload,
        params: &SplatParams,
    ) -> Option<Self> {
        let cov_inv = geom.cov.try_inverse()?;
        let (lo, hi) = sym_eigenvalues(&geom.cov);
        if !(lo > 0.0) {
            return None;
        }
        Some(Splat {
            source_view,
            source_index,
            mean: geom.mean,
            cov: geom.cov,
            cov_inv,
            cam_depth: geom.cam_depth,
            payload,
            uncertainty,
            shape: geom.mapping * geom.mapping.transpose() * (params.sigma0 * params.sigma0),
            alpha_peak: params.alpha_peak,
            stretch: lo / hi,
        })
    }

    /// Opacity of this splat at a novel-view pixel position.
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let d = Vector2::new(x - self.mean.x, y - self.mean.y);
        let q = d.dot(&(self.cov_inv * d));
        self.alpha_peak * (-0.5 * q).exp()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        sym_eigenvalues(&self.cov).1
    }
}

/// Eigenvalues `(min, max)` of a symmetric 2x2 matrix.
pub fn sym_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let c = m[(1, 1)];
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mid - rad, mid + rad)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterStats {
    pub splats: usize,
    pub skipped_grazing: usize,
    pub skipped_behind: usize,
}

impl std::ops::AddAssign for RasterStats {
    fn add_assign(&mut self, o: Self) {
        self.splats += o.splats;
        self.skipped_grazing += o.skipped_grazing;
        self.skipped_behind += o.skipped_behind;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterOptions {
    pub splat: SplatParams,
    /// Restrict each splat to the `ceil(3 sigma_max)` box.
    pub cutoff: bool,
    /// Keep at most this many front-most fragments per pixel.
    pub max_fragments: Option<usize>,
    /// Stop compositing once transmittance drops below [`TRANSMITTANCE_STOP`].
    pub early_stop: bool,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions {
            splat: SplatParams::default(),
            cutoff: true,
            max_fragments: Some(DEFAULT_MAX_FRAGMENTS),
            early_stop: true,
        }
    }
}

impl RasterOptions {
    /// Every splat touches every pixel and every fragment is composited.
    pub fn exhaustive() -> Self {
        RasterOptions {
            cutoff: false,
            max_fragments: None,
            early_stop: false,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub splat: u32,
    pub alpha: f64,
}

/// Composited result of one input view in the novel view. Fragment lists
/// are kept (depth-sorted, only the composited ones) for the backward pass
/// and the depth test.
#[derive(Clone, Debug)]
pub struct ViewRaster {
    pub view_id: u32,
    pub camera: CameraModel,
    pub splats: Vec<Splat>,
    pub radius: Option<usize>,
    pub payload: Vec<Payload>,
    /// `1 - prod(1 - alpha)` per pixel.
    pub opacity: Vec<f64>,
    /// Alpha-weighted mean stretch of the composited fragments (0 if none).
    pub stretch: Vec<f64>,
    offsets: Vec<usize>,
    fragments: Vec<Fragment>,
    pub stats: RasterStats,
}

impl ViewRaster {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn fragments(&self, pixel: usize) -> &[Fragment] {
        &self.fragments[self.offsets[pixel]..self.offsets[pixel + 1]]
    }

    /// Offset of pixel `pixel`'s first fragment in the flat fragment list.
    pub fn fragment_offset(&self, pixel: usize) -> usize {
        self.offsets[pixel]
    }

    pub fn fragment_count(&self) -> usize {
        self.fragments.len()
    }

    pub fn mixture(&self, pixel: usize) -> DepthMixture {
        let frags = self.fragments(pixel);
        build_mixture(frags.iter().map(|f| (self.splats[f.splat as usize].cam_depth, f.alpha)))
    }
}

/// Payload of input pixel `index`: harmonized color then sigmoid features.
pub fn pixel_payload(view: &InputView, index: usize) -> Payload {
    let mut p = Payload::zeros();
    let c = view.color.pixel(index);
    for k in 0..3 {
        p[k] = view.mu * c[k];
    }
    let f = view.feature_logit.pixel(index);
    for k in 0..FEATURE_CHANNELS {
        p[3 + k] = sigmoid(f[k]);
    }
    p
}

/// Splat for one input pixel, or the reason it was skipped. `None` for
/// invalid depth.
pub fn build_splat(
    view: &InputView,
    index: usize,
    novel: &CameraModel,
    params: &SplatParams,
) -> Option<Result<Splat, SplatSkip>> {
    let depth = view.depth_at(index)?;
    let w = view.width();
    let pixel = Vector2::new((index % w) as f64, (index / w) as f64);
    let normal = Vector3::from_column_slice(view.normal.pixel(index));
    let u = view.uncertainty(index);
    Some(
        splat_geometry(&view.camera, &pixel, depth, &normal, u, novel, params).and_then(|g| {
            Splat::from_geometry(view.id, index as u32, &g, u, pixel_payload(view, index), params)
                .ok_or(SplatSkip::Grazing)
        }),
    )
}

/// Splats for every valid pixel, in row-major source order.
pub fn build_splats(view: &InputView, novel: &CameraModel, params: &SplatParams) -> (Vec<Splat>, RasterStats) {
    let results: Vec<_> = (0..view.camera.pixel_count())
        .into_par_iter()
        .filter_map(|i| build_splat(view, i, novel, params))
        .collect();
    let mut stats = RasterStats::default();
    let mut splats = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => splats.push(s),
            Err(SplatSkip::Grazing) => stats.skipped_grazing += 1,
            Err(SplatSkip::BehindCamera) => stats.skipped_behind += 1,
        }
    }
    stats.splats = splats.len();
    (splats, stats)
}

/// `ceil(3 sigma_max)` where `sigma_max^2` is the largest covariance
/// eigenvalue after dropping the top 3% as outliers.
pub fn cutoff_radius(splats: &[Splat]) -> Result<usize> {
    let eig: Vec<f64> = splats.iter().map(Splat::max_eigenvalue).collect();
    cutoff_radius_from_eigenvalues(eig)
}

pub fn cutoff_radius_from_eigenvalues(mut eig: Vec<f64>) -> Result<usize> {
    if eig.is_empty() {
        return Err(Error::invalid("cutoff radius of an empty splat list"));
    }
    let drop = (CUTOFF_OUTLIER_FRACTION * eig.len() as f64).floor() as usize;
    let keep = eig.len() - drop;
    let (_, kth, _) = eig.select_nth_unstable_by(keep - 1, f64::total_cmp);
    let sigma_max = kth.max(0.0).sqrt();
    Ok((3.0 * sigma_max).ceil() as usize)
}

/// Splat `view` into `novel` and composite.
pub fn rasterize_view(view: &InputView, novel: &CameraModel, opts: &RasterOptions) -> ViewRaster {
    let (splats, stats) = build_splats(view, novel, &opts.splat);
    rasterize_splats(view.id, splats, stats, novel, opts)
}

struct PixelResult {
    fragments: Vec<Fragment>,
    payload: Payload,
    opacity: f64,
    stretch: f64,
}

/// Inclusive pixel box reached by a splat under cutoff radius `r`.
pub(crate) fn splat_box(mean: &Vector2<f64>, r: f64, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = (mean.x - r).ceil().max(0.0);
    let y0 = (mean.y - r).ceil().max(0.0);
    let x1 = (mean.x + r).floor().min(width as f64 - 1.0);
    let y1 = (mean.y + r).floor().min(height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Candidate splats per pixel in CSR form. Each list follows splat order,
/// or `(cam_depth, splat)` order when `by_depth` is set. With no radius every
/// splat is a candidate for every pixel.
pub(crate) fn candidate_lists(splats: &[Splat], radius: Option<usize>, w: usize, h: usize, by_depth: bool) -> (Option<Vec<usize>>, Vec<u32>) {
    let npix = w * h;
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    if by_depth {
        order.sort_by(|a, b| splats[*a as usize].cam_depth.total_cmp(&splats[*b as usize].cam_depth).then(a.cmp(b)));
    }
    let Some(r) = radius else {
        return (None, order);
    };
    let boxes: Vec<_> = splats.iter().map(|s| splat_box(&s.mean, r as f64, w, h)).collect();
    let mut counts = vec![0usize; npix + 1];
    for (x0, y0, x1, y1) in boxes.iter().flatten() {
        for y in *y0..=*y1 {
            for x in *x0..=*x1 {
                counts[y * w + x + 1] += 1;
            }
        }
    }
    for i in 0..npix {
        counts[i + 1] += counts[i];
    }
    let mut fill = counts.clone();
    let mut cand = vec![0u32; counts[npix]];
    for &s in &order {
        if let Some((x0, y0, x1, y1)) = boxes[s as usize] {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    cand[fill[p]] = s;
                    fill[p] += 1;
                }
            }
        }
    }
    (Some(counts), cand)
}

pub fn rasterize_splats(
    view_id: u32,
    splats: Vec<Splat>,
    stats: RasterStats,
    novel: &CameraModel,
    opts: &RasterOptions,
) -> ViewRaster {
    let (w, h) = (novel.width, novel.height);
    let npix = w * h;
    let radius = if opts.cutoff && !splats.is_empty() {
        cutoff_radius(&splats).ok()
    } else {
        None
    };

    let (cand_offsets, cand) = candidate_lists(&splats, radius, w, h, true);

    let results: Vec<PixelResult> = (0..npix)
        .into_par_iter()
        .map(|p| {
            let list = match &cand_offsets {
                Some(o) => &cand[o[p]..o[p + 1]],
                None => &cand[..],
            };
            composite_pixel(&splats, list, (p % w) as f64, (p / w) as f64, opts)
        })
        .collect();

    let mut offsets = Vec::with_capacity(npix + 1);
    let mut fragments = Vec::with_capacity(results.iter().map(|r| r.fragments.len()).sum());
    let mut payload = Vec::with_capacity(npix);
    let mut opacity = Vec::with_capacity(npix);
    let mut stretch = Vec::with_capacity(npix);
    offsets.push(0);
    for r in results {
        fragments.extend_from_slice(&r.fragments);
        offsets.push(fragments.len());
        payload.push(r.payload);
        opacity.push(r.opacity);
        stretch.push(r.stretch);
    }

    ViewRaster {
        view_id,
        camera: novel.clone(),
        splats,
        radius,
        payload,
        opacity,
        stretch,
        offsets,
        fragments,
        stats,
    }
}

/// `candidates` must already be in `(cam_depth, splat)` order.
fn composite_pixel(splats: &[Splat], candidates: &[u32], x: f64, y: f64, opts: &RasterOptions) -> PixelResult {
    let mut frags: Vec<Fragment> = candidates
        .iter()
        .filter_map(|&s| {
            let a = splats[s as usize].alpha_at(x, y);
            (a > 0.0).then_some(Fragment { splat: s, alpha: a })
        })
        .collect();
    if let Some(k) = opts.max_fragments {
        frags.truncate(k);
    }

    let mut c = Payload::zeros();
    let mut t = 1.0;
    let mut stretch_num = 0.0;
    let mut alpha_sum = 0.0;
    let mut used = 0;
    for f in &frags {
        if opts.early_stop && t < TRANSMITTANCE_STOP {
            break;
        }
        let s = &splats[f.splat as usize];
        let weight = t * f.alpha;
        c += s.payload * weight;
        t *= 1.0 - f.alpha;
        stretch_num += f.alpha * s.stretch;
        alpha_sum += f.alpha;
        used += 1;
    }
    frags.truncate(used);
    PixelResult {
        fragments: frags,
        payload: c,
        opacity: 1.0 - t,
        stretch: if alpha_sum > 0.0 { stretch_num / alpha_sum } else { 0.0 },
    }
}

/// Front-to-back composite of an already ordered stack; returns the
/// composited payload and the final transmittance.
pub fn composite_stack(alphas: &[f64], payloads: &[Payload]) -> (Payload, f64) {
    assert_eq!(alphas.len(), payloads.len());
    let mut c = Payload::zeros();
    let mut t = 1.0;
    for (a, p) in alphas.iter().zip(payloads) {
        let weight = t * a;
        c += p * weight;
        t *= 1.0 - a;
    }
    (c, t)
}
