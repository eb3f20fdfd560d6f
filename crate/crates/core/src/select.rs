//! Input-view selection for a novel pose: per-view coverage score maps,
//! greedy maximum coverage with a fallback for degenerate gains, and
//! temporal smoothing of the selection weights.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::scene::InputView;

pub const DEFAULT_DOWNSCALE: usize = 8;
/// Relative depth tolerance of the reprojection visibility test.
pub const DEFAULT_TOLERANCE: f64 = 0.02;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_SMOOTHING: f64 = 0.05;
pub const DEFAULT_KEEP: usize = 9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreMode {
    #[default]
    Binary,
    /// `min(d_in, d_novel) / max(d_in, d_novel)` of the camera-to-point
    /// distances.
    DistanceRatio,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectOptions {
    pub downscale: usize,
    pub tolerance: f64,
    pub epsilon: f64,
    pub mode: ScoreMode,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            downscale: DEFAULT_DOWNSCALE,
            tolerance: DEFAULT_TOLERANCE,
            epsilon: DEFAULT_EPSILON,
            mode: ScoreMode::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub view_id: u32,
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
}

impl ScoreMap {
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// Nearest surface point seen by each cell of a low-resolution novel raster.
#[derive(Clone, Debug)]
pub struct SurfaceRaster {
    pub camera: CameraModel,
    /// `(camera depth, world point)` of the nearest point, if any.
    pub cells: Vec<Option<(f64, Vector3<f64>)>>,
}

impl SurfaceRaster {
    pub fn build(views: &[&InputView], novel: &CameraModel, downscale: usize) -> Result<Self> {
        if downscale < 1 {
            return Err(Error::invalid("score map downscale must be >= 1"));
        }
        let w = novel.width.div_ceil(downscale);
        let h = novel.height.div_ceil(downscale);
        let camera = novel.resized(w, h);
        let mut cells: Vec<Option<(f64, Vector3<f64>)>> = vec![None; w * h];
        for view in views {
            for p in view.point_cloud() {
                let Ok((px, z)) = camera.project_point(&p) else {
                    continue;
                };
                if !camera.contains(&px) {
                    continue;
                }
                let i = px.y.round() as usize * w + px.x.round() as usize;
                if cells[i].is_none_or(|(d, _)| z < d) {
                    cells[i] = Some((z, p));
                }
            }
        }
        Ok(SurfaceRaster { camera, cells })
    }
}

/// Whether `view` sees world point `p` (in bounds, not occluded within the
/// relative tolerance).
pub fn sees_point(view: &InputView, p: &Vector3<f64>, tolerance: f64) -> bool {
    let Ok((px, z)) = view.camera.project_point(p) else {
        return false;
    };
    if !view.camera.contains(&px) {
        return false;
    }
    let i = px.y.round() as usize * view.width() + px.x.round() as usize;
    view.depth_at(i).is_some_and(|d| (d - z).abs() < tolerance * z)
}

/// Score map of `view` over a prebuilt surface raster.
pub fn score_map_on(view: &InputView, surface: &SurfaceRaster, opts: &SelectOptions) -> ScoreMap {
    let novel_center = surface.camera.center();
    let view_center = view.camera.center();
    let scores = surface
        .cells
        .iter()
        .map(|cell| match cell {
            Some((_, p)) if sees_point(view, p, opts.tolerance) => match opts.mode {
                ScoreMode::Binary => 1.0,
                ScoreMode::DistanceRatio => {
                    let a = (p - view_center).norm();
                    let b = (p - novel_center).norm();
                    a.min(b) / a.max(b)
                }
            },
            _ => 0.0,
        })
        .collect();
    ScoreMap {
        view_id: view.id,
        width: surface.camera.width,
        height: surface.camera.height,
        scores,
    }
}

/// Score maps of all `views` for a novel pose, over the union point cloud.
pub fn score_maps(views: &[&InputView], novel: &CameraModel, opts: &SelectOptions) -> Result<Vec<ScoreMap>> {
    let surface = SurfaceRaster::build(views, novel, opts.downscale)?;
    Ok(views.par_iter().map(|v| score_map_on(v, &surface, opts)).collect())
}

/// Single-view convenience form of [`score_maps`].
pub fn score_map(view: &InputView, novel: &CameraModel, opts: &SelectOptions) -> Result<ScoreMap> {
    let surface = SurfaceRaster::build(&[view], novel, opts.downscale)?;
    Ok(score_map_on(view, &surface, opts))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Selected view ids in pick order.
    pub ids: Vec<u32>,
    /// `sum_p max_{selected} S_i(p)`.
    pub coverage: f64,
    /// Pick index from which the absolute criterion was used.
    pub fallback_from: Option<usize>,
}

/// Coverage of a set of maps: `sum_p max_i S_i(p)`.
pub fn coverage(maps: &[&ScoreMap]) -> f64 {
    let Some(first) = maps.first() else {
        return 0.0;
    };
    (0..first.scores.len())
        .map(|p| maps.iter().map(|m| m.scores[p]).fold(0.0, f64::max))
        .sum()
}

/// Greedy maximum coverage of `k` maps.
///
/// Each pick maximizes the coverage gain. When the best gain falls below
/// `epsilon` times the previous pick's gain (or the previous gain was zero),
/// this and every later pick take the unselected map with the largest total
/// score instead. Ties go to the lower view id.
pub fn select_cameras(maps: &[ScoreMap], k: usize, epsilon: f64) -> Result<Selection> {
    if k < 1 {
        return Err(Error::invalid("must select at least one view"));
    }
    if k > maps.len() {
        return Err(Error::invalid(format!("cannot select {k} of {} views", maps.len())));
    }
    if let Some(m) = maps.iter().find(|m| m.scores.len() != maps[0].scores.len()) {
        return Err(Error::invalid(format!("score map of view {} has a different size", m.view_id)));
    }
    let npix = maps[0].scores.len();
    let mut covered = vec![0.0f64; npix];
    let mut taken = vec![false; maps.len()];
    let mut ids = Vec::with_capacity(k);
    let mut prev_gain: Option<f64> = None;
    let mut fallback_from = None;

    let better = |score: f64, id: u32, best: Option<(f64, u32, usize)>| match best {
        None => true,
        Some((s, bid, _)) => score > s || (score == s && id < bid),
    };

    for pick in 0..k {
        let mut best_gain: Option<(f64, u32, usize)> = None;
        for (i, m) in maps.iter().enumerate().filter(|(i, _)| !taken[*i]) {
            let g: f64 = m.scores.iter().zip(&covered).map(|(s, c)| (s - c).max(0.0)).sum();
            if better(g, m.view_id, best_gain) {
                best_gain = Some((g, m.view_id, i));
            }
        }
        let (gain, _, mut chosen) = best_gain.expect("k <= number of maps");
        if fallback_from.is_none() {
            if let Some(prev) = prev_gain {
                if prev <= 0.0 || gain / prev < epsilon {
                    fallback_from = Some(pick);
                }
            }
        }
        if fallback_from.is_some() {
            let mut best: Option<(f64, u32, usize)> = None;
            for (i, m) in maps.iter().enumerate().filter(|(i, _)| !taken[*i]) {
                let total = m.total();
                if better(total, m.view_id, best) {
                    best = Some((total, m.view_id, i));
                }
            }
            chosen = best.expect("k <= number of maps").2;
        }
        taken[chosen] = true;
        ids.push(maps[chosen].view_id);
        for (c, s) in covered.iter_mut().zip(&maps[chosen].scores) {
            *c = c.max(*s);
        }
        prev_gain = Some(gain);
    }
    Ok(Selection {
        ids,
        coverage: covered.iter().sum(),
        fallback_from,
    })
}

/// Temporally smoothed selection weights for a sequence of novel poses.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionState {
    pub ids: Vec<u32>,
    /// Smoothed weight per entry of `ids`.
    pub weights: Vec<f64>,
    /// Up to `keep` ids with the highest positive weights.
    pub selected: Vec<u32>,
    pub lambda: f64,
    pub keep: usize,
}

impl SelectionState {
    pub fn new(ids: Vec<u32>, lambda: f64, keep: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::invalid(format!("smoothing factor must be in (0, 1], got {lambda}")));
        }
        let n = ids.len();
        Ok(SelectionState {
            ids,
            weights: vec![0.0; n],
            selected: Vec::new(),
            lambda,
            keep,
        })
    }

    /// Weight of the given view, 0 if unknown.
    pub fn weight(&self, id: u32) -> f64 {
        self.ids.iter().position(|i| *i == id).map_or(0.0, |i| self.weights[i])
    }

    /// `w = lambda s + (1 - lambda) w` per view, then re-selects the
    /// highest-weight views. `scores` is aligned with `ids`.
    pub fn update(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.ids.len() {
            return Err(Error::invalid(format!("got {} scores for {} views", scores.len(), self.ids.len())));
        }
        for (w, s) in self.weights.iter_mut().zip(scores) {
            *w = self.lambda * s + (1.0 - self.lambda) * *w;
        }
        let mut order: Vec<usize> = (0..self.ids.len()).filter(|i| self.weights[*i] > 0.0).collect();
        order.sort_by(|a, b| self.weights[*b].total_cmp(&self.weights[*a]).then(self.ids[*a].cmp(&self.ids[*b])));
        order.truncate(self.keep);
        self.selected = order.into_iter().map(|i| self.ids[i]).collect();
        Ok(())
    }

    /// Marks the ids in `picked` with score 1 and everything else with 0.
    pub fn update_with_selection(&mut self, picked: &[u32]) -> Result<()> {
        let scores: Vec<f64> = self.ids.iter().map(|id| if picked.contains(id) { 1.0 } else { 0.0 }).collect();
        self.update(&scores)
    }

    /// Smoothly normalized weights of the selected views, aligned with
    /// `selected`.
    pub fn blend_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = self.selected.iter().map(|id| self.weight(*id)).collect();
        smooth_normalize(&w)
    }
}

/// `(w - min) / sum(w - min)`, or uniform when all weights are equal.
pub fn smooth_normalize(weights: &[f64]) -> Vec<f64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = weights.iter().map(|w| w - min).collect();
    let total: f64 = shifted.iter().sum();
    if total < 1e-12 {
        return vec![1.0 / weights.len() as f64; weights.len()];
    }
    shifted.iter().map(|w| w / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(id: u32, scores: Vec<f64>) -> ScoreMap {
        ScoreMap {
            view_id: id,
            width: scores.len(),
            height: 1,
            scores,
        }
    }

    #[test]
    fn disjoint_halves_are_both_selected() {
        let a = map(0, vec![1.0, 1.0, 0.0, 0.0]);
        let b = map(1, vec![0.0, 0.0, 1.0, 1.0]);
        for maps in [vec![a.clone(), b.clone()], vec![b, a]] {
            let s = select_cameras(&maps, 2, DEFAULT_EPSILON).unwrap();
            let mut ids = s.ids.clone();
            ids.sort();
            assert_eq!(ids, vec![0, 1]);
            assert_eq!(s.coverage, 4.0);
            assert_eq!(s.fallback_from, None);
        }
    }

    #[test]
    fn duplicate_pose_triggers_fallback() {
        let maps = vec![
            map(0, vec![1.0; 6]),
            map(1, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            map(2, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]),
            map(3, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
        ];
        let s = select_cameras(&maps, 3, DEFAULT_EPSILON).unwrap();
        assert_eq!(s.ids, vec![0, 2, 1]);
        assert_eq!(s.fallback_from, Some(1));
    }

    #[test]
    fn ties_go_to_lower_id() {
        let maps = vec![map(5, vec![1.0, 0.0]), map(2, vec![0.0, 1.0])];
        assert_eq!(select_cameras(&maps, 1, 0.05).unwrap().ids, vec![2]);
    }

    #[test]
    fn bad_k_is_rejected() {
        let maps = vec![map(0, vec![1.0])];
        assert!(select_cameras(&maps, 2, 0.05).is_err());
        assert!(select_cameras(&maps, 0, 0.05).is_err());
    }

    fn exhaustive_best(maps: &[ScoreMap], k: usize) -> f64 {
        let m = maps.len();
        let mut best: f64 = 0.0;
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let chosen: Vec<&ScoreMap> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| &maps[i]).collect();
            best = best.max(coverage(&chosen));
        }
        best
    }

    #[test]
    fn greedy_is_within_classical_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bound = 1.0 - (-1.0f64).exp();
        for _ in 0..50 {
            let m = rng.random_range(2..=10);
            let k = rng.random_range(1..=4.min(m));
            let maps: Vec<ScoreMap> = (0..m)
                .map(|i| map(i as u32, (0..40).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect()))
                .collect();
            let greedy = select_cameras(&maps, k, 0.0).unwrap();
            let opt = exhaustive_best(&maps, k);
            assert!(greedy.coverage >= bound * opt - 1e-12, "{} vs {}", greedy.coverage, opt);
        }
    }

    #[test]
    fn temporal_weights() {
        let mut st = SelectionState::new(vec![0, 1], 0.05, 9).unwrap();
        st.update(&[1.0, 0.0]).unwrap();
        assert!((st.weights[0] - 0.05).abs() < 1e-15);
        assert_eq!(st.selected, vec![0]);
        for _ in 0..199 {
            st.update(&[1.0, 0.0]).unwrap();
        }
        assert!((st.weights[0] - 1.0).abs() < 1e-4);
        let mut st = SelectionState::new(vec![3, 4, 5], 1.0, 2).unwrap();
        st.update(&[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(st.weights, vec![0.0, 1.0, 1.0]);
        assert_eq!(st.selected, vec![4, 5]);
        assert!(SelectionState::new(vec![], 0.0, 1).is_err());
    }

    #[test]
    fn smooth_normalization() {
        assert_eq!(smooth_normalize(&[1.0, 0.0]), vec![1.0, 0.0]);
        let u = smooth_normalize(&[0.5, 0.5, 0.5]);
        assert!(u.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = smooth_normalize(&[0.2, 0.9, 0.4]);
        assert_eq!(w[0], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn temporal_weights_stay_in_unit_interval(
            lambda in 0.01f64..=1.0,
            seq in proptest::collection::vec(proptest::bool::ANY, 1..100),
        ) {
            let mut st = SelectionState::new(vec![0], lambda, 9).unwrap();
            for s in seq {
                st.update(&[if s { 1.0 } else { 0.0 }]).unwrap();
                proptest::prop_assert!((0.0..=1.0).contains(&st.weights[0]));
            }
        }
    }
}
