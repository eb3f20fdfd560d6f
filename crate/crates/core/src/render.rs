//! Novel-view synthesis: per-view splatting, probabilistic visibility, and
//! weighted-average pooling of the per-view composites followed by a linear
//! head.
//!
//! Each selected view `n` gets the per-pixel weight
//! `w_n = w_select(n) * w_stretch_n(p) * w_visible_n(p)` and the pooled
//! payload is `sum_n w_n c_n / sum_n w_n`.

use nalgebra::{Matrix2, SMatrix, Vector3};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::depth_test::{prob_front, DepthMixture};
use crate::error::{Error, Result};
use crate::scene::{Map, Scene};
use crate::select::{score_maps, select_cameras, SelectOptions, Selection, SelectionState};
use crate::splat::covariance::SplatParams;
use crate::splat::backward::{attribute_backward_masked, composite_backward, AttributeMask, ViewGrads};
use crate::splat::layered::{layered_composite, LayeredOptions, DEFAULT_LAYERS};
use crate::splat::raster::{rasterize_view, sym_eigenvalues, Payload, RasterOptions, RasterStats, ViewRaster, PAYLOAD_DIM};

pub type HeadMatrix = SMatrix<f64, 3, PAYLOAD_DIM>;

/// Affine map from the pooled payload to RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub matrix: HeadMatrix,
    pub bias: Vector3<f64>,
}

impl Default for LinearHead {
    fn default() -> Self {
        LinearHead::identity()
    }
}

impl LinearHead {
    /// Passes the three color channels through and ignores the features.
    pub fn identity() -> Self {
        let mut matrix = HeadMatrix::zeros();
        for k in 0..3 {
            matrix[(k, k)] = 1.0;
        }
        LinearHead {
            matrix,
            bias: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, pooled: &Payload) -> Vector3<f64> {
        self.matrix * pooled + self.bias
    }

    /// Gradients with respect to the head and to its input.
    pub fn backward(&self, pooled: &Payload, grad: &Vector3<f64>) -> (HeadGrad, Payload) {
        (
            HeadGrad {
                matrix: grad * pooled.transpose(),
                bias: *grad,
            },
            self.matrix.transpose() * grad,
        )
    }

    /// Matrix (row-major) followed by bias.
    pub fn to_params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..3).flat_map(|r| (0..PAYLOAD_DIM).map(move |c| (r, c))).map(|rc| self.matrix[rc]).collect();
        v.extend(self.bias.iter());
        v
    }

    pub fn from_params(p: &[f64]) -> Result<Self> {
        let n = 3 * PAYLOAD_DIM;
        if p.len() != n + 3 {
            return Err(Error::invalid(format!("head needs {} parameters, got {}", n + 3, p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("head parameters must be finite"));
        }
        Ok(LinearHead {
            matrix: HeadMatrix::from_row_slice(&p[..n]),
            bias: Vector3::new(p[n], p[n + 1], p[n + 2]),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub matrix: HeadMatrix,
    pub bias: Vector3<f64>,
}

impl HeadGrad {
    pub fn zeros() -> Self {
        HeadGrad {
            matrix: HeadMatrix::zeros(),
            bias: Vector3::zeros(),
        }
    }

    /// Same layout as [`LinearHead::to_params`].
    pub fn to_params(&self) -> Vec<f64> {
        LinearHead {
            matrix: self.matrix,
            bias: self.bias,
        }
        .to_params()
    }
}

/// `lambda_min / lambda_max` of a symmetric positive-definite covariance.
pub fn texture_stretch_weight(cov: &Matrix2<f64>) -> Result<f64> {
    if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 * cov.abs().max() {
        return Err(Error::invalid("covariance is not symmetric"));
    }
    let (lo, hi) = sym_eigenvalues(cov);
    if !(lo > 0.0) || !hi.is_finite() {
        return Err(Error::invalid("covariance is not positive definite"));
    }
    Ok(lo / hi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Number of views blended per frame.
    pub k: usize,
    /// Quadrature nodes per depth component in the visibility test.
    pub samples: usize,
    /// Use the layered approximation instead of sorted compositing.
    pub fast: bool,
    pub layers: usize,
    pub raster: RasterOptions,
    pub select: SelectOptions,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            k: 9,
            samples: 1,
            fast: false,
            layers: DEFAULT_LAYERS,
            raster: RasterOptions::default(),
            select: SelectOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderStats {
    pub raster: RasterStats,
    pub selected: Vec<u32>,
    pub coverage: f64,
    pub fallback_from: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct NovelRender {
    pub width: usize,
    pub height: usize,
    /// Clamped to `[0, 1]`; background where invalid.
    pub color: Map,
    /// Head output before clamping; background where invalid.
    pub raw: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
    pub pooled: Vec<Payload>,
    /// Ids of the blended views, aligned with `view_weights`.
    pub view_ids: Vec<u32>,
    /// Per blended view, per pixel: the product weight.
    pub view_weights: Vec<Vec<f64>>,
    pub stats: RenderStats,
}

impl NovelRender {
    /// Mean normalized weight share of each blended view over valid pixels.
    pub fn mean_weights(&self) -> Vec<(u32, f64)> {
        let n = self.valid.iter().filter(|v| **v).count();
        self.view_ids
            .iter()
            .enumerate()
            .map(|(k, id)| {
                if n == 0 {
                    return (*id, 0.0);
                }
                let sum: f64 = (0..self.valid.len())
                    .filter(|p| self.valid[*p])
                    .map(|p| {
                        let total: f64 = self.view_weights.iter().map(|w| w[p]).sum();
                        self.view_weights[k][p] / total
                    })
                    .sum();
                (*id, sum / n as f64)
            })
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// State kept from a full-mode forward pass for [`render_backward`].
#[derive(Clone, Debug)]
pub struct RenderTrace {
    /// Scene indices of the blended views, aligned with `rasters`.
    pub view_indices: Vec<usize>,
    pub rasters: Vec<ViewRaster>,
    pub splat: SplatParams,
}

/// Greedy coverage selection among the scene views at `candidates`.
pub fn select_views(scene: &Scene, candidates: &[usize], novel: &CameraModel, k: usize, opts: &SelectOptions) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate views to select from"));
    }
    let views: Vec<_> = candidates.iter().map(|i| &scene.views[*i]).collect();
    let maps = score_maps(&views, novel, opts)?;
    select_cameras(&maps, k.clamp(1, views.len()), opts.epsilon)
}

/// Stateless render: selection from scratch with every picked view weighted
/// equally.
pub fn render_novel(scene: &Scene, novel: &CameraModel, opts: &RenderOptions, head: &LinearHead) -> Result<NovelRender> {
    let all: Vec<usize> = (0..scene.views.len()).collect();
    let sel = select_views(scene, &all, novel, opts.k, &opts.select)?;
    let indices = ids_to_indices(scene, &sel.ids)?;
    let blend = vec![1.0 / indices.len() as f64; indices.len()];
    let (mut out, _) = render_views(scene, &indices, &blend, novel, opts, head, false)?;
    out.stats.coverage = sel.coverage;
    out.stats.fallback_from = sel.fallback_from;
    Ok(out)
}

/// Render for one frame of a sequence: the selection feeds the temporal
/// weights in `state` and the blend weights come from their smooth
/// normalization.
pub fn render_novel_smoothed(
    scene: &Scene,
    novel: &CameraModel,
    opts: &RenderOptions,
    head: &LinearHead,
    state: &mut SelectionState,
) -> Result<NovelRender> {
    let all: Vec<usize> = (0..scene.views.len()).collect();
    let sel = select_views(scene, &all, novel, opts.k, &opts.select)?;
    state.update_with_selection(&sel.ids)?;
    if state.selected.is_empty() {
        return Err(Error::invalid("no views selected"));
    }
    let indices = ids_to_indices(scene, &state.selected)?;
    let blend = state.blend_weights();
    let (mut out, _) = render_views(scene, &indices, &blend, novel, opts, head, false)?;
    out.stats.coverage = sel.coverage;
    out.stats.fallback_from = sel.fallback_from;
    Ok(out)
}

fn ids_to_indices(scene: &Scene, ids: &[u32]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| scene.view_index(*id).ok_or_else(|| Error::invalid(format!("unknown view id {id}"))))
        .collect()
}

struct Composite {
    payload: Vec<Payload>,
    stretch: Vec<f64>,
    mixtures: Vec<DepthMixture>,
}

/// Renders the given views with per-view blend weights `blend`. With
/// `keep_trace` (full mode only) the per-view rasters are returned for the
/// backward pass.
pub fn render_views(
    scene: &Scene,
    view_indices: &[usize],
    blend: &[f64],
    novel: &CameraModel,
    opts: &RenderOptions,
    head: &LinearHead,
    keep_trace: bool,
) -> Result<(NovelRender, Option<RenderTrace>)> {
    if view_indices.is_empty() {
        return Err(Error::invalid("no views selected"));
    }
    if blend.len() != view_indices.len() {
        return Err(Error::invalid("one blend weight per view is required"));
    }
    if keep_trace && opts.fast {
        return Err(Error::invalid("the layered fast path has no backward pass"));
    }
    if opts.samples < 1 {
        return Err(Error::invalid("depth test needs at least one sample"));
    }
    let npix = novel.pixel_count();
    let mut stats = RenderStats {
        selected: view_indices.iter().map(|i| scene.views[*i].id).collect(),
        ..Default::default()
    };

    let mut rasters = Vec::new();
    let composites: Vec<Composite> = if opts.fast {
        let views: Vec<_> = view_indices.iter().map(|i| &scene.views[*i]).collect();
        let lopts = LayeredOptions {
            layers: opts.layers,
            splat: opts.raster.splat,
            cutoff: opts.raster.cutoff,
        };
        layered_composite(&views, novel, &lopts)?
            .into_iter()
            .map(|l| {
                stats.raster += l.stats;
                Composite {
                    payload: l.payload,
                    stretch: l.stretch,
                    mixtures: l.mixtures,
                }
            })
            .collect()
    } else {
        rasters = view_indices
            .iter()
            .map(|i| rasterize_view(&scene.views[*i], novel, &opts.raster))
            .collect();
        rasters
            .iter()
            .map(|r| {
                stats.raster += r.stats;
                Composite {
                    payload: r.payload.clone(),
                    stretch: r.stretch.clone(),
                    mixtures: (0..npix).into_par_iter().map(|p| r.mixture(p)).collect(),
                }
            })
            .collect()
    };

    let sigma = scene.depth_sigma;
    let nviews = composites.len();
    let per_pixel: Vec<Vec<f64>> = (0..npix)
        .into_par_iter()
        .map(|p| {
            let mixes: Vec<&DepthMixture> = composites.iter().map(|c| &c.mixtures[p]).collect();
            let visible = prob_front(&mixes, sigma, opts.samples)?;
            Ok((0..nviews)
                .map(|n| blend[n] * composites[n].stretch[p] * visible[n])
                .collect())
        })
        .collect::<Result<_>>()?;

    let bg = Vector3::from(scene.background);
    let mut color = Map::new(novel.width, novel.height, 3);
    let mut raw = vec![bg; npix];
    let mut valid = vec![false; npix];
    let mut pooled = vec![Payload::zeros(); npix];
    let mut view_weights = vec![vec![0.0; npix]; nviews];
    for p in 0..npix {
        let w = &per_pixel[p];
        let total: f64 = w.iter().sum();
        for n in 0..nviews {
            view_weights[n][p] = w[n];
        }
        if total > 0.0 {
            let mut acc = Payload::zeros();
            for n in 0..nviews {
                acc += composites[n].payload[p] * w[n];
            }
            pooled[p] = acc / total;
            raw[p] = head.apply(&pooled[p]);
            valid[p] = true;
        }
        let px = color.pixel_mut(p);
        for k in 0..3 {
            px[k] = raw[p][k].clamp(0.0, 1.0);
        }
    }

    let render = NovelRender {
        width: novel.width,
        height: novel.height,
        color,
        raw,
        valid,
        pooled,
        view_ids: stats.selected.clone(),
        view_weights,
        stats,
    };
    let trace = (keep_trace).then(|| RenderTrace {
        view_indices: view_indices.to_vec(),
        rasters,
        splat: opts.raster.splat,
    });
    Ok((render, trace))
}

/// Chains `dL/d raw` (per pixel, zero where the loss ignores the pixel) into
/// the head and the blended views. Visibility and stretch weights are held
/// constant.
pub fn render_backward(
    scene: &Scene,
    trace: &RenderTrace,
    render: &NovelRender,
    head: &LinearHead,
    grad_raw: &[Vector3<f64>],
    mask: &AttributeMask,
) -> (HeadGrad, Vec<(usize, ViewGrads)>) {
    let npix = render.width * render.height;
    assert_eq!(grad_raw.len(), npix);
    let mut head_grad = HeadGrad::zeros();
    let mut pooled_grad = vec![Payload::zeros(); npix];
    for p in 0..npix {
        if !render.valid[p] || grad_raw[p] == Vector3::zeros() {
            continue;
        }
        let (hg, pg) = head.backward(&render.pooled[p], &grad_raw[p]);
        head_grad.matrix += hg.matrix;
        head_grad.bias += hg.bias;
        pooled_grad[p] = pg;
    }
    let total: Vec<f64> = (0..npix)
        .map(|p| render.view_weights.iter().map(|w| w[p]).sum())
        .collect();
    let view_grads = trace
        .view_indices
        .iter()
        .zip(&trace.rasters)
        .enumerate()
        .map(|(n, (vi, raster))| {
            let upstream: Vec<Payload> = (0..npix)
                .map(|p| {
                    if total[p] > 0.0 {
                        pooled_grad[p] * (render.view_weights[n][p] / total[p])
                    } else {
                        Payload::zeros()
                    }
                })
                .collect();
            let frag = composite_backward(raster, &upstream);
            (*vi, attribute_backward_masked(&scene.views[*vi], raster, &frag, &trace.splat, mask))
        })
        .collect();
    (head_grad, view_grads)
}
