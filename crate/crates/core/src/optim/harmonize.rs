use rand::seq::index::sample;

use super::loo::{loo_gradients, random_patch};
use super::{OptimConfig, TraceRow, Trainer};
use crate::error::{Error, Result};
use crate::render::LinearHead;
use crate::scene::Scene;
use crate::splat::{attribute_backward_masked, composite_backward, rasterize_view, AttributeMask, Payload, ViewGrads};

pub const DEFAULT_MU_WEIGHT: f64 = 0.2;

/// `weight * sum (mu_i - 1)^2 / N` and its gradient.
pub fn mu_regularizer(mus: &[f64], weight: f64) -> (f64, Vec<f64>) {
    let n = mus.len().max(1) as f64;
    let loss = weight * mus.iter().map(|m| (m - 1.0).powi(2)).sum::<f64>() / n;
    let grad = mus.iter().map(|m| 2.0 * weight * (m - 1.0) / n).collect();
    (loss, grad)
}

/// Photoconsistency of one ordered view pair on a patch of the target view.
#[derive(Clone, Debug)]
pub struct PhotoTerm {
    pub loss: f64,
    /// Pixels where the splatted view has nonzero opacity.
    pub covered: usize,
    /// Gradients of the target view (`mu`, and colors when masked in).
    pub target: ViewGrads,
    /// Gradients of the splatted view.
    pub source: ViewGrads,
}

/// Squared difference between the target view's harmonized colors, masked
/// by the splatted opacity, and `source` splatted into the target patch at
/// `(x0, y0)` of size `size`. Averaged over covered pixels and channels. The
/// opacity mask is held constant.
pub fn photo_loss(scene: &Scene, source: usize, target: usize, x0: usize, y0: usize, size: usize, config: &OptimConfig, mask: &AttributeMask) -> Result<PhotoTerm> {
    let tv = &scene.views[target];
    let sv = &scene.views[source];
    let (w, h) = (size.min(tv.width() - x0), size.min(tv.height() - y0));
    let cam = tv.camera.crop(x0, y0, w, h);
    let raster = rasterize_view(sv, &cam, &config.render.raster);
    let covered = raster.opacity.iter().filter(|a| **a > 0.0).count();
    let mut tg = ViewGrads::zeros(tv);
    if covered == 0 {
        return Ok(PhotoTerm {
            loss: 0.0,
            covered,
            target: tg,
            source: ViewGrads::zeros(sv),
        });
    }
    let scale = 1.0 / (3.0 * covered as f64);
    let mut loss = 0.0;
    let mut upstream = vec![Payload::zeros(); w * h];
    for p in 0..w * h {
        let a = raster.opacity[p];
        if a <= 0.0 {
            continue;
        }
        let ti = (p / w + y0) * tv.width() + p % w + x0;
        let c = tv.color.pixel(ti);
        for k in 0..3 {
            let r = a * tv.mu * c[k] - raster.payload[p][k];
            loss += r * r * scale;
            let g = 2.0 * r * scale;
            upstream[p][k] = -g;
            if mask.mu {
                tg.mu += g * a * c[k];
            }
            if mask.color {
                tg.color[3 * ti + k] += g * a * tv.mu;
            }
        }
    }
    let frags = composite_backward(&raster, &upstream);
    let sg = attribute_backward_masked(sv, &raster, &frags, &config.render.raster.splat, mask);
    Ok(PhotoTerm {
        loss,
        covered,
        target: tg,
        source: sg,
    })
}

#[derive(Clone, Debug)]
pub struct HarmonizeResult {
    /// `(view id, mu)` in scene order.
    pub mu: Vec<(u32, f64)>,
    pub trace: Vec<TraceRow>,
}

impl Trainer {
    /// One harmonization iteration: leave-one-out L1, the pull of `mu`
    /// towards 1, and photoconsistency over random view pairs.
    pub fn harmonize_step(&mut self, scene: &mut Scene) -> Result<Option<f64>> {
        self.check_scene(scene)?;
        let train = self.config.harmonize_groups();
        let mask = train.attribute_mask();
        let Some(l1) = loo_gradients(scene, &self.targets, &self.head, &self.config, &mut self.rng, &mask)? else {
            self.iteration += 1;
            log::warn!("iteration {}: no patch with valid pixels, skipped", self.iteration);
            return Ok(None);
        };
        self.iteration += 1;
        let n = scene.views.len();
        let mut grads: Vec<ViewGrads> = scene.views.iter().map(ViewGrads::zeros).collect();
        for (i, g) in &l1.views {
            grads[*i].add_assign(g);
        }

        let mus: Vec<f64> = scene.views.iter().map(|v| v.mu).collect();
        let (mu_reg, mu_grad) = mu_regularizer(&mus, self.config.mu_weight);
        for (g, d) in grads.iter_mut().zip(&mu_grad) {
            g.mu += d;
        }

        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|m| (0..n).filter(move |t| *t != m).map(move |t| (m, t))).collect();
        let chosen: Vec<(usize, usize)> = if self.config.photo_pairs == 0 || self.config.photo_pairs >= pairs.len() {
            pairs
        } else {
            let mut idx = sample(&mut self.rng, pairs.len(), self.config.photo_pairs).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pairs[i]).collect()
        };
        let mut photo = 0.0;
        for (m, t) in chosen {
            let (_, x0, y0) = random_patch(&scene.views[t].camera, self.config.patch_size, &mut self.rng);
            let term = photo_loss(scene, m, t, x0, y0, self.config.patch_size, &self.config, &mask)?;
            photo += term.loss;
            grads[t].add_assign(&term.target);
            grads[m].add_assign(&term.source);
        }

        let loss = l1.loss + mu_reg + photo;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                param: "harmonization loss".into(),
                index: 0,
                value: loss,
            });
        }
        let indexed: Vec<(usize, ViewGrads)> = grads.into_iter().enumerate().collect();
        self.apply(scene, None, &indexed, &train)?;
        self.trace.push(TraceRow {
            iteration: self.iteration,
            loss,
            l1: l1.loss,
            mu_reg,
            photo,
            valid_pixels: l1.valid_pixels,
            holdout: scene.views[l1.holdout].id,
        });
        Ok(Some(loss))
    }
}

/// Optimizes the exposure coefficients (and colors when configured) of
/// `scene` in place for `config.iterations` iterations.
pub fn harmonize(scene: &mut Scene, config: &OptimConfig) -> Result<HarmonizeResult> {
    let mut t = Trainer::new(scene, LinearHead::identity(), config.clone())?;
    for _ in 0..config.iterations {
        t.harmonize_step(scene)?;
    }
    Ok(HarmonizeResult {
        mu: scene.views.iter().map(|v| (v.id, v.mu)).collect(),
        trace: t.trace,
    })
}
