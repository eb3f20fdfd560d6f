use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;

use super::{OptimConfig, PATCH_TRIES};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::render::{render_backward, render_views, select_views, HeadGrad, LinearHead, NovelRender, RenderTrace};
use crate::scene::{Map, Scene};
use crate::splat::{AttributeMask, ViewGrads};

/// Loss and gradients of one leave-one-out iteration.
#[derive(Clone, Debug)]
pub struct LooGradients {
    pub loss: f64,
    /// Scene index of the held-out view.
    pub holdout: usize,
    /// Scene indices of the rendered views.
    pub sources: Vec<usize>,
    pub valid_pixels: usize,
    pub head: HeadGrad,
    /// Per scene index; the held-out view carries only its `mu` gradient.
    pub views: Vec<(usize, ViewGrads)>,
}

/// A random patch of `view`'s image as a camera, with its pixel offset.
pub(crate) fn random_patch(camera: &CameraModel, size: usize, rng: &mut impl Rng) -> (CameraModel, usize, usize) {
    let w = size.min(camera.width);
    let h = size.min(camera.height);
    let x0 = rng.random_range(0..=camera.width - w);
    let y0 = rng.random_range(0..=camera.height - h);
    (camera.crop(x0, y0, w, h), x0, y0)
}

/// Draws the holdout, patch and source views and renders the patch. Retries
/// the patch while it has no valid pixel.
#[allow(clippy::type_complexity)]
pub(crate) fn render_holdout_patch(
    scene: &Scene,
    head: &LinearHead,
    config: &OptimConfig,
    rng: &mut impl Rng,
) -> Result<Option<(usize, usize, usize, Vec<usize>, NovelRender, RenderTrace)>> {
    let n = scene.views.len();
    if n < 2 {
        return Err(Error::invalid("leave-one-out needs at least two views"));
    }
    let holdout = rng.random_range(0..n);
    let others: Vec<usize> = (0..n).filter(|i| *i != holdout).collect();
    let pool = config.pool.min(others.len());
    let use_n = config.use_views.min(pool);
    let mut opts = config.render;
    opts.fast = false;
    for _ in 0..PATCH_TRIES {
        let (cam, x0, y0) = random_patch(&scene.views[holdout].camera, config.patch_size, rng);
        let sel = select_views(scene, &others, &cam, pool, &config.render.select)?;
        let picked: Vec<u32> = if sel.ids.len() <= use_n {
            sel.ids.clone()
        } else {
            let mut idx = sample(rng, sel.ids.len(), use_n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| sel.ids[i]).collect()
        };
        let sources: Vec<usize> = picked.iter().map(|id| scene.view_index(*id).expect("selected id exists")).collect();
        let blend = vec![1.0 / sources.len() as f64; sources.len()];
        let (render, trace) = render_views(scene, &sources, &blend, &cam, &opts, head, true)?;
        if render.valid_count() > 0 {
            let trace = trace.expect("trace requested");
            return Ok(Some((holdout, x0, y0, sources, render, trace)));
        }
    }
    Ok(None)
}

/// L1 loss of a patch render against the held-out view's reference image
/// (`targets`, by scene index) scaled by its `mu`, and its gradients. `mask`
/// selects which view parameters get gradients.
pub fn loo_gradients(
    scene: &Scene,
    targets: &[Map],
    head: &LinearHead,
    config: &OptimConfig,
    rng: &mut impl Rng,
    mask: &AttributeMask,
) -> Result<Option<LooGradients>> {
    let Some((holdout, x0, y0, sources, render, trace)) = render_holdout_patch(scene, head, config, rng)? else {
        return Ok(None);
    };
    let target = &scene.views[holdout];
    let image = targets
        .get(holdout)
        .filter(|m| m.width == target.width() && m.height == target.height() && m.channels == 3)
        .ok_or_else(|| Error::invalid(format!("no reference image for view {}", target.id)))?;
    let tw = target.width();
    let npix = render.width * render.height;
    let valid = render.valid_count();
    let scale = 1.0 / (3.0 * valid as f64);
    let mut loss = 0.0;
    let mut grad_raw = vec![Vector3::zeros(); npix];
    let mut mu_grad = 0.0;
    for p in 0..npix {
        if !render.valid[p] {
            continue;
        }
        let (px, py) = (p % render.width + x0, p / render.width + y0);
        let c = image.pixel(py * tw + px);
        for k in 0..3 {
            let r = render.raw[p][k] - target.mu * c[k];
            loss += r.abs() * scale;
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_raw[p][k] = s * scale;
            mu_grad -= s * scale * c[k];
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            param: "loss".into(),
            index: 0,
            value: loss,
        });
    }
    let (head_grad, mut views) = render_backward(scene, &trace, &render, head, &grad_raw, mask);
    let mut h = ViewGrads::zeros(target);
    if mask.mu {
        h.mu = mu_grad;
    }
    views.push((holdout, h));
    Ok(Some(LooGradients {
        loss,
        holdout,
        sources,
        valid_pixels: valid,
        head: head_grad,
        views,
    }))
}
