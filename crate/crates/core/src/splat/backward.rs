//! Gradients of the per-view composite.
//!
//! For a depth-ordered stack with transmittance `T_i = prod_{j<i} (1 - a_j)`:
//!
//! ```text
//! dc/dc_i = a_i T_i
//! dc/da_i = c_i T_i - sum_{l>i} c_l a_l prod_{j<l, j!=i} (1 - a_j)
//!         = T_i (c_i - B_i)
//! ```
//!
//! where `B_i` is the composite of the fragments behind `i`. The order is held
//! fixed: depth is not differentiated through the sort.

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use super::covariance::{splat_geometry, SplatParams};
use super::raster::{Payload, ViewRaster, PAYLOAD_DIM};
use crate::scene::{sigmoid, InputView, FEATURE_CHANNELS};

/// Step used to differentiate the covariance with respect to the normal.
pub const NORMAL_FD_STEP: f64 = 1e-4;
/// Relative step used to differentiate the covariance with respect to depth.
pub const DEPTH_FD_REL_STEP: f64 = 1e-5;

/// Per-fragment gradients, aligned with the raster's flat fragment list.
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentGrads {
    pub payload: Vec<Payload>,
    pub alpha: Vec<f64>,
}

/// Gradients of `upstream . composite(alphas, payloads)`.
pub fn composite_stack_backward(alphas: &[f64], payloads: &[Payload], upstream: &Payload) -> (Vec<Payload>, Vec<f64>) {
    let n = alphas.len();
    let mut d_payload = vec![Payload::zeros(); n];
    let mut d_alpha = vec![0.0; n];
    stack_backward_into(n, |i| (alphas[i], &payloads[i]), upstream, &mut d_payload, &mut d_alpha);
    (d_payload, d_alpha)
}

fn stack_backward_into<'p>(
    n: usize,
    frag: impl Fn(usize) -> (f64, &'p Payload),
    upstream: &Payload,
    d_payload: &mut [Payload],
    d_alpha: &mut [f64],
) {
    // d_alpha holds the transmittance in front of each fragment until overwritten.
    let mut t = 1.0;
    for i in 0..n {
        d_alpha[i] = t;
        t *= 1.0 - frag(i).0;
    }
    let mut behind = Payload::zeros();
    for i in (0..n).rev() {
        let (a, c) = frag(i);
        let trans = d_alpha[i];
        d_payload[i] = upstream * (a * trans);
        d_alpha[i] = trans * upstream.dot(&(c - behind));
        behind = c * a + behind * (1.0 - a);
    }
}

/// Chains per-pixel upstream gradients (`dL/dc_n`) into per-fragment ones.
pub fn composite_backward(raster: &ViewRaster, upstream: &[Payload]) -> FragmentGrads {
    let npix = raster.width() * raster.height();
    assert_eq!(upstream.len(), npix);
    let total = raster.fragment_count();
    let mut payload = vec![Payload::zeros(); total];
    let mut alpha = vec![0.0; total];
    let mut slices = Vec::with_capacity(npix);
    let (mut rest_p, mut rest_a) = (payload.as_mut_slice(), alpha.as_mut_slice());
    for p in 0..npix {
        let n = raster.fragments(p).len();
        let (hp, tp) = rest_p.split_at_mut(n);
        let (ha, ta) = rest_a.split_at_mut(n);
        slices.push((p, hp, ha));
        rest_p = tp;
        rest_a = ta;
    }
    slices.into_par_iter().for_each(|(p, dp, da)| {
        let frags = raster.fragments(p);
        if frags.is_empty() || upstream[p].iter().all(|g| *g == 0.0) {
            return;
        }
        stack_backward_into(
            frags.len(),
            |i| (frags[i].alpha, &raster.splats[frags[i].splat as usize].payload),
            &upstream[p],
            dp,
            da,
        );
    });
    FragmentGrads { payload, alpha }
}

/// Gradients on one view's parameter maps, laid out like the maps' data.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGrads {
    pub view_id: u32,
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub normal: Vec<f64>,
    pub uncertainty_logit: Vec<f64>,
    pub feature_logit: Vec<f64>,
    pub mu: f64,
}

impl ViewGrads {
    pub fn zeros(view: &InputView) -> Self {
        let n = view.camera.pixel_count();
        ViewGrads {
            view_id: view.id,
            color: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            normal: vec![0.0; 3 * n],
            uncertainty_logit: vec![0.0; n],
            feature_logit: vec![0.0; FEATURE_CHANNELS * n],
            mu: 0.0,
        }
    }

    pub fn add_assign(&mut self, o: &ViewGrads) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.color, &o.color);
        add(&mut self.depth, &o.depth);
        add(&mut self.normal, &o.normal);
        add(&mut self.uncertainty_logit, &o.uncertainty_logit);
        add(&mut self.feature_logit, &o.feature_logit);
        self.mu += o.mu;
    }

    pub fn is_zero(&self) -> bool {
        self.mu == 0.0
            && [&self.color, &self.depth, &self.normal, &self.uncertainty_logit, &self.feature_logit]
                .iter()
                .all(|v| v.iter().all(|x| *x == 0.0))
    }
}

#[inline]
fn frob(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a.component_mul(b).sum()
}

struct SplatGrad {
    payload: Payload,
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
}

/// Which parameter maps [`attribute_backward_masked`] fills in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttributeMask {
    pub color: bool,
    pub depth: bool,
    pub normal: bool,
    pub uncertainty: bool,
    pub features: bool,
    pub mu: bool,
}

impl AttributeMask {
    pub const ALL: AttributeMask = AttributeMask {
        color: true,
        depth: true,
        normal: true,
        uncertainty: true,
        features: true,
        mu: true,
    };

    fn geometry(&self) -> bool {
        self.depth || self.normal || self.uncertainty
    }
}

/// Routes fragment gradients into `view`'s color, depth, normal,
/// uncertainty, feature and `mu` parameters.
///
/// Payload gradients go through the harmonization scale and the feature
/// sigmoid. Alpha gradients go through the Gaussian into the splat mean and
/// covariance; the mean is differentiated analytically with respect to depth,
/// the covariance by central differences of the footprint construction with
/// respect to depth and the three normal components.
pub fn attribute_backward(view: &InputView, raster: &ViewRaster, grads: &FragmentGrads, params: &SplatParams) -> ViewGrads {
    attribute_backward_masked(view, raster, grads, params, &AttributeMask::ALL)
}

/// [`attribute_backward`] restricted to the maps selected by `mask`; the
/// others are left at zero and their (costly) chains are skipped.
pub fn attribute_backward_masked(
    view: &InputView,
    raster: &ViewRaster,
    grads: &FragmentGrads,
    params: &SplatParams,
    mask: &AttributeMask,
) -> ViewGrads {
    let nsplat = raster.splats.len();
    let mut acc: Vec<SplatGrad> = (0..nsplat)
        .map(|_| SplatGrad {
            payload: Payload::zeros(),
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
        })
        .collect();

    let w = raster.width();
    for p in 0..w * raster.height() {
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        let base = raster.fragment_offset(p);
        for (k, f) in raster.fragments(p).iter().enumerate() {
            let g = &mut acc[f.splat as usize];
            g.payload += grads.payload[base + k];
            let ga = grads.alpha[base + k];
            if ga != 0.0 && mask.geometry() {
                let s = &raster.splats[f.splat as usize];
                let d = Vector2::new(x - s.mean.x, y - s.mean.y);
                let sd = s.cov_inv * d;
                g.mean += sd * (ga * f.alpha);
                g.cov += sd * sd.transpose() * (0.5 * ga * f.alpha);
            }
        }
    }

    let novel = &raster.camera;
    let per_splat: Vec<(usize, [f64; 3], f64, f64, [f64; 3], [f64; FEATURE_CHANNELS], f64)> = raster
        .splats
        .par_iter()
        .zip(acc.par_iter())
        .map(|(s, g)| {
            let idx = s.source_index as usize;
            let gp = &g.payload;
            let color = view.color.pixel(idx);
            let mut d_color = [0.0; 3];
            let mut d_mu = 0.0;
            for k in 0..3 {
                d_color[k] = view.mu * gp[k];
                d_mu += gp[k] * color[k];
            }
            let mut d_feat = [0.0; FEATURE_CHANNELS];
            let logits = view.feature_logit.pixel(idx);
            for k in 0..FEATURE_CHANNELS {
                let sg = sigmoid(logits[k]);
                d_feat[k] = gp[3 + k] * sg * (1.0 - sg);
            }
            debug_assert_eq!(PAYLOAD_DIM, 3 + FEATURE_CHANNELS);

            let d_logit_u = s.uncertainty * frob(&g.cov, &s.shape);

            let depth = view.depth.data[idx];
            let pixel = Vector2::new((idx % view.width()) as f64, (idx / view.width()) as f64);
            let normal = Vector3::from_column_slice(view.normal.pixel(idx));
            let mut d_depth = 0.0;
            let mut d_normal = [0.0; 3];
            if mask.depth && g.mean != Vector2::zeros() {
                let ray_world = view.camera.rotation.transpose() * view.camera.ray(&pixel);
                let world = view.camera.camera_to_world(&(view.camera.ray(&pixel) * depth));
                let c = novel.world_to_camera(&world);
                let dm_dd = novel.projection_jacobian(&c) * (novel.rotation * ray_world);
                d_depth += g.mean.dot(&dm_dd);
            }
            if (mask.depth || mask.normal) && g.cov != Matrix2::zeros() {
                let cov_at = |d: f64, n: &Vector3<f64>| {
                    splat_geometry(&view.camera, &pixel, d, n, s.uncertainty, novel, params)
                        .ok()
                        .map(|geom| geom.cov)
                };
                let h = DEPTH_FD_REL_STEP * depth;
                if mask.depth {
                    if let (Some(a), Some(b)) = (cov_at(depth + h, &normal), cov_at(depth - h, &normal)) {
                        d_depth += frob(&g.cov, &((a - b) / (2.0 * h)));
                    }
                }
                for (k, slot) in d_normal.iter_mut().enumerate().filter(|_| mask.normal) {
                    let mut e = Vector3::zeros();
                    e[k] = NORMAL_FD_STEP;
                    let plus = (normal + e).normalize();
                    let minus = (normal - e).normalize();
                    if let (Some(a), Some(b)) = (cov_at(depth, &plus), cov_at(depth, &minus)) {
                        *slot = frob(&g.cov, &((a - b) / (2.0 * NORMAL_FD_STEP)));
                    }
                }
            }
            (idx, d_color, d_mu, d_depth, d_normal, d_feat, d_logit_u)
        })
        .collect();

    let mut out = ViewGrads::zeros(view);
    for (idx, d_color, d_mu, d_depth, d_normal, d_feat, d_u) in per_splat {
        if mask.color {
            out.color[3 * idx..3 * idx + 3].copy_from_slice(&d_color);
        }
        if mask.mu {
            out.mu += d_mu;
        }
        out.depth[idx] = d_depth;
        out.normal[3 * idx..3 * idx + 3].copy_from_slice(&d_normal);
        if mask.features {
            out.feature_logit[FEATURE_CHANNELS * idx..FEATURE_CHANNELS * (idx + 1)].copy_from_slice(&d_feat);
        }
        if mask.uncertainty {
            out.uncertainty_logit[idx] = d_u;
        }
    }
    out
}
