//! Per-view attribute optimization: leave-one-out training against held-out
//! views, exposure harmonization, and the Adam update machinery they share.

mod adam;
mod harmonize;
mod loo;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use harmonize::{harmonize, mu_regularizer, photo_loss, HarmonizeResult, PhotoTerm, DEFAULT_MU_WEIGHT};
pub use loo::{loo_gradients, LooGradients};

use crate::error::{Error, Result};
use crate::render::{HeadGrad, LinearHead, RenderOptions};
use crate::scene::{is_valid_depth, InputView, Map, Scene};
use crate::splat::{AttributeMask, ViewGrads};

pub const DEFAULT_PATCH: usize = 150;
pub const DEFAULT_POOL: usize = 13;
pub const DEFAULT_USE: usize = 9;
/// Attempts at drawing a patch with at least one valid pixel.
pub const PATCH_TRIES: usize = 10;
/// Smallest depth an update may leave behind.
const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub head: f64,
    pub normal: f64,
    pub depth: f64,
    pub features: f64,
    pub uncertainty: f64,
    pub color: f64,
    pub mu: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            head: 1e-4,
            normal: 1e-4,
            depth: 1e-4,
            features: 1e-3,
            uncertainty: 1e-2,
            color: 1e-3,
            mu: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        LearningRates {
            head: 0.0,
            normal: 0.0,
            depth: 0.0,
            features: 0.0,
            uncertainty: 0.0,
            color: 0.0,
            mu: 0.0,
        }
    }

    fn all(&self) -> [(&'static str, f64); 7] {
        [
            ("head", self.head),
            ("normal", self.normal),
            ("depth", self.depth),
            ("features", self.features),
            ("uncertainty", self.uncertainty),
            ("color", self.color),
            ("mu", self.mu),
        ]
    }
}

/// Parameter groups that receive updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamGroups {
    pub head: bool,
    pub color: bool,
    pub depth: bool,
    pub normal: bool,
    pub uncertainty: bool,
    pub features: bool,
    pub mu: bool,
}

impl ParamGroups {
    /// Everything but the exposure coefficients, which only harmonization
    /// trains.
    pub const GEOMETRY_AND_APPEARANCE: ParamGroups = ParamGroups {
        head: true,
        color: true,
        depth: true,
        normal: true,
        uncertainty: true,
        features: true,
        mu: false,
    };

    pub const MU_ONLY: ParamGroups = ParamGroups {
        head: false,
        color: false,
        depth: false,
        normal: false,
        uncertainty: false,
        features: false,
        mu: true,
    };

    pub fn attribute_mask(&self) -> AttributeMask {
        AttributeMask {
            color: self.color,
            depth: self.depth,
            normal: self.normal,
            uncertainty: self.uncertainty,
            features: self.features,
            mu: self.mu,
        }
    }
}

impl Default for ParamGroups {
    fn default() -> Self {
        ParamGroups::GEOMETRY_AND_APPEARANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub iterations: usize,
    pub patch_size: usize,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    /// Views kept by coverage selection before the random draw.
    pub pool: usize,
    /// Views drawn from the pool and rendered.
    pub use_views: usize,
    pub seed: u64,
    pub render: RenderOptions,
    pub train: ParamGroups,
    /// Weight of the pull of every `mu` towards 1.
    pub mu_weight: f64,
    /// View pairs in the photoconsistency term per iteration (0 = all).
    pub photo_pairs: usize,
    /// Also train colors during harmonization.
    pub harmonize_colors: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            iterations: 100,
            patch_size: DEFAULT_PATCH,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            pool: DEFAULT_POOL,
            use_views: DEFAULT_USE,
            seed: 0,
            render: RenderOptions::default(),
            train: ParamGroups::default(),
            mu_weight: DEFAULT_MU_WEIGHT,
            photo_pairs: 2,
            harmonize_colors: false,
        }
    }
}

impl OptimConfig {
    /// Groups trained by [`harmonize`].
    pub fn harmonize_groups(&self) -> ParamGroups {
        ParamGroups {
            color: self.harmonize_colors,
            ..ParamGroups::MU_ONLY
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in self.lr.all() {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::invalid(format!("learning rate for {name} must be finite and non-negative, got {lr}")));
            }
        }
        if self.patch_size < 16 {
            return Err(Error::invalid(format!("patch size must be at least 16, got {}", self.patch_size)));
        }
        if self.use_views < 1 || self.use_views > self.pool {
            return Err(Error::invalid(format!(
                "views used ({}) must be between 1 and the pool size ({})",
                self.use_views, self.pool
            )));
        }
        if !(self.mu_weight >= 0.0) || !self.mu_weight.is_finite() {
            return Err(Error::invalid("mu weight must be finite and non-negative"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::invalid("adam needs betas in [0, 1) and a positive epsilon"));
        }
        Ok(())
    }
}

/// One line of the loss trace.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub l1: f64,
    pub mu_reg: f64,
    pub photo: f64,
    pub valid_pixels: usize,
    pub holdout: u32,
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut out = String::from("iteration,loss,l1,mu_reg,photo,valid_pixels,holdout\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, r.loss, r.l1, r.mu_reg, r.photo, r.valid_pixels, r.holdout
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
struct ViewState {
    color: AdamState,
    depth: AdamState,
    normal: AdamState,
    uncertainty: AdamState,
    features: AdamState,
    mu: AdamState,
}

impl ViewState {
    fn new(view: &InputView) -> Self {
        ViewState {
            color: AdamState::new(view.color.data.len()),
            depth: AdamState::new(view.depth.data.len()),
            normal: AdamState::new(view.normal.data.len()),
            uncertainty: AdamState::new(view.uncertainty_logit.data.len()),
            features: AdamState::new(view.feature_logit.data.len()),
            mu: AdamState::new(1),
        }
    }
}

/// Optimizer state across iterations: the head, per-parameter Adam moments
/// and the random stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: OptimConfig,
    pub head: LinearHead,
    pub trace: Vec<TraceRow>,
    /// Input images the held-out renders are compared against, captured
    /// before any color update.
    pub targets: Vec<Map>,
    head_state: AdamState,
    views: Vec<ViewState>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(scene: &Scene, head: LinearHead, config: OptimConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        if scene.views.len() < 2 {
            return Err(Error::invalid("optimization needs at least two views"));
        }
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            head_state: AdamState::new(head.to_params().len()),
            views: scene.views.iter().map(ViewState::new).collect(),
            targets: scene.views.iter().map(|v| v.color.clone()).collect(),
            config,
            head,
            trace: Vec::new(),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One leave-one-out iteration. Returns `None` when no patch with valid
    /// pixels was found and the iteration was skipped.
    pub fn loo_step(&mut self, scene: &mut Scene) -> Result<Option<f64>> {
        self.check_scene(scene)?;
        let mask = self.config.train.attribute_mask();
        let grads = loo_gradients(scene, &self.targets, &self.head, &self.config, &mut self.rng, &mask)?;
        self.iteration += 1;
        let Some(g) = grads else {
            log::warn!("iteration {}: no patch with valid pixels after {PATCH_TRIES} tries, skipped", self.iteration);
            return Ok(None);
        };
        let train = self.config.train;
        self.apply(scene, Some(&g.head), &g.views, &train)?;
        self.trace.push(TraceRow {
            iteration: self.iteration,
            loss: g.loss,
            l1: g.loss,
            valid_pixels: g.valid_pixels,
            holdout: scene.views[g.holdout].id,
            ..Default::default()
        });
        Ok(Some(g.loss))
    }

    /// Runs `config.iterations` leave-one-out steps.
    pub fn optimize(&mut self, scene: &mut Scene) -> Result<()> {
        for _ in 0..self.config.iterations {
            self.loo_step(scene)?;
        }
        Ok(())
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.views.len() != self.views.len()
            || scene.views.iter().zip(&self.views).any(|(v, s)| v.depth.data.len() != s.depth.m.len())
        {
            return Err(Error::invalid("scene does not match the optimizer state"));
        }
        Ok(())
    }

    /// Adam step on every group in `train` that has a gradient, then
    /// normal renormalization. Gradients are checked for finiteness before
    /// anything is touched.
    fn apply(&mut self, scene: &mut Scene, head: Option<&HeadGrad>, views: &[(usize, ViewGrads)], train: &ParamGroups) -> Result<()> {
        for (i, g) in views {
            let id = scene.views[*i].id;
            let groups: [(&str, &[f64]); 5] = [
                ("color", &g.color),
                ("depth", &g.depth),
                ("normal", &g.normal),
                ("uncertainty", &g.uncertainty_logit),
                ("features", &g.feature_logit),
            ];
            for (name, data) in groups {
                if let Some((index, value)) = data.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        param: format!("view {id} {name}"),
                        index,
                        value: *value,
                    });
                }
            }
            if !g.mu.is_finite() {
                return Err(Error::NonFinite {
                    param: format!("view {id} mu"),
                    index: 0,
                    value: g.mu,
                });
            }
        }
        let lr = self.config.lr;
        let adam = self.config.adam;
        if let (Some(hg), true) = (head, train.head) {
            let mut params = self.head.to_params();
            adam_update("head", &mut params, &hg.to_params(), &mut self.head_state, lr.head, &adam)?;
            self.head = LinearHead::from_params(&params)?;
        }
        for (i, g) in views {
            let view = &mut scene.views[*i];
            let st = &mut self.views[*i];
            let previous_normals = train.normal.then(|| view.normal.clone());
            if train.color {
                adam_update("color", &mut view.color.data, &g.color, &mut st.color, lr.color, &adam)?;
            }
            if train.depth {
                let before = view.depth.data.clone();
                adam_update("depth", &mut view.depth.data, &g.depth, &mut st.depth, lr.depth, &adam)?;
                for (d, b) in view.depth.data.iter_mut().zip(&before) {
                    if is_valid_depth(*b) && !(*d >= MIN_DEPTH) {
                        *d = MIN_DEPTH.max(*b * 0.5);
                    }
                }
            }
            if train.normal {
                adam_update("normal", &mut view.normal.data, &g.normal, &mut st.normal, lr.normal, &adam)?;
            }
            if train.uncertainty {
                adam_update(
                    "uncertainty",
                    &mut view.uncertainty_logit.data,
                    &g.uncertainty_logit,
                    &mut st.uncertainty,
                    lr.uncertainty,
                    &adam,
                )?;
            }
            if train.features {
                adam_update("features", &mut view.feature_logit.data, &g.feature_logit, &mut st.features, lr.features, &adam)?;
            }
            if train.mu {
                let mut mu = [view.mu];
                adam_update("mu", &mut mu, &[g.mu], &mut st.mu, lr.mu, &adam)?;
                view.mu = mu[0].max(0.0);
            }
            if let Some(prev) = previous_normals {
                view.renormalize_normals(Some(&prev));
            }
        }
        Ok(())
    }
}

/// Runs leave-one-out optimization on `scene` in place and returns the
/// trained head with the loss trace.
pub fn optimize(scene: &mut Scene, head: LinearHead, config: &OptimConfig) -> Result<(LinearHead, Vec<TraceRow>)> {
    let mut t = Trainer::new(scene, head, config.clone())?;
    t.optimize(scene)?;
    Ok((t.head, t.trace))
}
