//! Probabilistic visibility between input views at one novel-view pixel.
//!
//! Each view's depth at the pixel is a mixture of triangle distributions
//! (half-width `sigma`) centered on its composited fragments, weighted by
//! `beta_i = alpha_i * prod_{j<i} (1 - alpha_j)`, plus a component at
//! infinity holding the residual transmittance. The visibility weight of
//! view `n` is the probability that its depth is the strict minimum.

use std::borrow::{Borrow, Cow};
use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DepthMixture {
    /// `(depth, beta)` in front-to-back order.
    pub components: Vec<(f64, f64)>,
    pub beta_inf: f64,
}

impl DepthMixture {
    /// Mixture with nothing but the point at infinity.
    pub fn empty() -> Self {
        DepthMixture {
            components: Vec::new(),
            beta_inf: 1.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.1).sum::<f64>() + self.beta_inf
    }

    /// `P(D > t)`.
    pub fn survival(&self, t: f64, sigma: f64) -> f64 {
        self.components
            .iter()
            .map(|&(d, b)| b * triangle_tail(t, d, sigma))
            .sum::<f64>()
            + self.beta_inf
    }
}

/// Builds the mixture from depth-ordered `(depth, alpha)` fragments.
pub fn build_mixture(fragments: impl IntoIterator<Item = (f64, f64)>) -> DepthMixture {
    let mut t = 1.0;
    let components = fragments
        .into_iter()
        .map(|(d, a)| {
            let beta = a * t;
            t *= 1.0 - a;
            (d, beta)
        })
        .collect();
    DepthMixture {
        components,
        beta_inf: t,
    }
}

/// Symmetric triangle density with support `[x - sigma, x + sigma]`.
#[inline]
pub fn triangle_pdf(t: f64, x: f64, sigma: f64) -> f64 {
    let r = sigma - (t - x).abs();
    if r > 0.0 {
        r / (sigma * sigma)
    } else {
        0.0
    }
}

/// Complementary CDF `P(X > t)` of the triangle distribution centered at `x`.
#[inline]
pub fn triangle_tail(t: f64, x: f64, sigma: f64) -> f64 {
    if t < x - sigma {
        1.0
    } else if t > x + sigma {
        0.0
    } else if t <= x {
        let u = t - x + sigma;
        1.0 - u * u / (2.0 * sigma * sigma)
    } else {
        let v = x + sigma - t;
        v * v / (2.0 * sigma * sigma)
    }
}

/// Probability, per view, that the view's depth is strictly in front of
/// every other view's depth, integrated with `samples` nodes per component.
///
/// Nodes sit at `d - sigma + 2 sigma t / (S + 1)`, `t = 1..=S`, and are
/// weighted by the triangle density normalized over the nodes, so every
/// component contributes exactly its `beta` of probability mass. With
/// `S = 1` the single node is the component's own depth.
pub fn prob_front<M: Borrow<DepthMixture>>(mixtures: &[M], sigma: f64, samples: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("depth test sigma must be positive, got {sigma}")));
    }
    if samples < 1 {
        return Err(Error::invalid("depth test needs at least one sample"));
    }
    if mixtures.is_empty() {
        return Err(Error::invalid("depth test needs at least one view"));
    }
    let step = 2.0 * sigma / (samples as f64 + 1.0);
    let sweeps: Vec<Sweep> = mixtures.iter().map(|m| Sweep::new(m.borrow())).collect();
    let mut out = Vec::with_capacity(mixtures.len());
    SCRATCH.with_borrow_mut(|buf| {
        let NodeBuffers { nodes, density, owner, others, values } = buf;
        for (n, mix) in mixtures.iter().enumerate() {
            let mix = mix.borrow();
            nodes.clear();
            density.clear();
            owner.clear();
            for (j, &(d, beta)) in mix.components.iter().enumerate() {
                if beta <= 0.0 {
                    continue;
                }
                for t in 1..=samples {
                    let s = d - sigma + step * t as f64;
                    let f = triangle_pdf(s, d, sigma);
                    if f > 0.0 {
                        nodes.push(s);
                        density.push(f);
                        owner.push(j);
                    }
                }
            }
            others.clear();
            others.resize(nodes.len(), 1.0);
            values.resize(nodes.len(), 0.0);
            for (m, sweep) in sweeps.iter().enumerate() {
                if m == n {
                    continue;
                }
                sweep.survival_at(nodes, sigma, values);
                for (o, v) in others.iter_mut().zip(values.iter()) {
                    *o *= v;
                }
            }
            let mut total = 0.0;
            let mut k = 0;
            while k < nodes.len() {
                let j = owner[k];
                let (mut num, mut den) = (0.0, 0.0);
                while k < nodes.len() && owner[k] == j {
                    num += density[k] * others[k];
                    den += density[k];
                    k += 1;
                }
                total += mix.components[j].1 * num / den;
            }
            out.push(total.clamp(0.0, 1.0));
        }
    });
    Ok(out)
}

/// Per-thread node storage reused across calls.
#[derive(Default)]
struct NodeBuffers {
    nodes: Vec<f64>,
    density: Vec<f64>,
    owner: Vec<usize>,
    others: Vec<f64>,
    values: Vec<f64>,
}

thread_local! {
    static SCRATCH: RefCell<NodeBuffers> = RefCell::new(NodeBuffers::default());
}

/// Evaluates a mixture's survival at many depths in one pass over its
/// depth-sorted components.
///
/// At depth `t` each component is either wholly behind (tail 1), on the
/// rising or falling half of its triangle, or wholly in front (tail 0). The
/// two partial groups contribute quadratics in `t`, kept as moment sums about
/// a local origin that follows the queries so the expansion stays well
/// conditioned.
struct Sweep<'a> {
    components: Cow<'a, [(f64, f64)]>,
    /// `behind[i]`: total beta of sorted components `i..` plus infinity.
    behind: Vec<f64>,
}

#[derive(Default)]
struct Moments {
    mass: f64,
    first: f64,
    second: f64,
}

impl Moments {
    fn add(&mut self, b: f64, x: f64) {
        self.mass += b;
        self.first += b * x;
        self.second += b * x * x;
    }

    fn sub(&mut self, b: f64, x: f64) {
        self.mass -= b;
        self.first -= b * x;
        self.second -= b * x * x;
    }

    /// `sum b (u - x)^2`.
    fn quadratic(&self, u: f64) -> f64 {
        self.mass * u * u - 2.0 * u * self.first + self.second
    }
}

impl<'a> Sweep<'a> {
    fn new(mixture: &'a DepthMixture) -> Self {
        let c = &mixture.components;
        let components = if c.windows(2).all(|w| w[0].0 <= w[1].0) {
            Cow::Borrowed(c.as_slice())
        } else {
            let mut v = c.clone();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            Cow::Owned(v)
        };
        let mut behind = vec![0.0; components.len() + 1];
        let mut acc = mixture.beta_inf;
        behind[components.len()] = acc;
        for i in (0..components.len()).rev() {
            acc += components[i].1;
            behind[i] = acc;
        }
        Sweep { components, behind }
    }

    /// Writes `P(D > t)` for every `t` in `queries` into `out`.
    fn survival_at(&self, queries: &[f64], sigma: f64, out: &mut [f64]) {
        let c = &*self.components;
        let in_order = queries.windows(2).all(|w| w[0] <= w[1]);
        let mut order: Vec<usize> = Vec::new();
        if !in_order {
            order = (0..queries.len()).collect();
            order.sort_by(|&a, &b| queries[a].total_cmp(&queries[b]));
        }
        let index = |k: usize| if in_order { k } else { order[k] };
        let inv = 1.0 / (2.0 * sigma * sigma);
        // Components [enter..] are behind, [mid..enter) rising, [leave..mid)
        // falling, [..leave) in front.
        let (mut enter, mut mid, mut leave) = (0, 0, 0);
        let mut origin = if queries.is_empty() { 0.0 } else { queries[index(0)] };
        let mut rising = Moments::default();
        let mut falling = Moments::default();
        for k in 0..queries.len() {
            let q = index(k);
            let t = queries[q];
            if (t - origin).abs() > sigma {
                origin = t;
                rising = Moments::default();
                falling = Moments::default();
                for &(x, b) in &c[mid..enter] {
                    rising.add(b, x - sigma - origin);
                }
                for &(x, b) in &c[leave..mid] {
                    falling.add(b, x + sigma - origin);
                }
            }
            while enter < c.len() && c[enter].0 - sigma <= t {
                rising.add(c[enter].1, c[enter].0 - sigma - origin);
                enter += 1;
            }
            while mid < enter && c[mid].0 < t {
                rising.sub(c[mid].1, c[mid].0 - sigma - origin);
                falling.add(c[mid].1, c[mid].0 + sigma - origin);
                mid += 1;
            }
            while leave < mid && c[leave].0 + sigma < t {
                falling.sub(c[leave].1, c[leave].0 + sigma - origin);
                leave += 1;
            }
            let u = t - origin;
            out[q] = self.behind[enter] + rising.mass - inv * rising.quadratic(u) + inv * falling.quadratic(u);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinOracle {
    /// Fraction of draws in which each view was the strict minimum.
    pub per_view: Vec<f64>,
    /// Fraction of draws in which every view drew its point at infinity.
    pub all_infinite: f64,
    /// Fraction of draws with a tie for the minimum.
    pub ties: f64,
}

/// Monte-Carlo estimate of the strict-minimum probabilities.
pub fn sample_min_oracle(mixtures: &[DepthMixture], sigma: f64, draws: usize, seed: u64) -> Result<MinOracle> {
    if draws < 1 {
        return Err(Error::invalid("oracle needs at least one draw"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = vec![0u64; mixtures.len()];
    let mut infinite = 0u64;
    let mut ties = 0u64;
    let mut depths = vec![0.0; mixtures.len()];
    for _ in 0..draws {
        for (slot, mix) in depths.iter_mut().zip(mixtures) {
            let u: f64 = rng.random::<f64>() * mix.total_mass();
            let mut acc = 0.0;
            let mut picked = f64::INFINITY;
            for &(d, b) in &mix.components {
                acc += b;
                if u < acc {
                    // Sum of two uniforms is triangular on [-1, 1].
                    let z = rng.random::<f64>() + rng.random::<f64>() - 1.0;
                    picked = d + sigma * z;
                    break;
                }
            }
            *slot = picked;
        }
        let min = depths.iter().copied().fold(f64::INFINITY, f64::min);
        if min == f64::INFINITY {
            infinite += 1;
            continue;
        }
        let mut winners = depths.iter().enumerate().filter(|(_, d)| **d == min);
        let first = winners.next().map(|(i, _)| i);
        if winners.next().is_some() {
            ties += 1;
        } else if let Some(i) = first {
            wins[i] += 1;
        }
    }
    let n = draws as f64;
    Ok(MinOracle {
        per_view: wins.iter().map(|w| *w as f64 / n).collect(),
        all_infinite: infinite as f64 / n,
        ties: ties as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(d: f64) -> DepthMixture {
        DepthMixture {
            components: vec![(d, 1.0)],
            beta_inf: 0.0,
        }
    }

    #[test]
    fn mixture_examples() {
        let m = build_mixture([(1.0, 1.0)]);
        assert_eq!(m.components, vec![(1.0, 1.0)]);
        assert_eq!(m.beta_inf, 0.0);
        let m = build_mixture([(1.0, 0.5), (2.0, 0.5)]);
        assert_eq!(m.components, vec![(1.0, 0.5), (2.0, 0.25)]);
        assert_eq!(m.beta_inf, 0.25);
        let m = build_mixture(std::iter::empty());
        assert_eq!(m.beta_inf, 1.0);
    }

    #[test]
    fn tail_pieces() {
        let s = 0.3;
        assert_eq!(triangle_tail(2.0, 2.0, s), 0.5);
        assert_eq!(triangle_tail(2.0 - 2.0 * s, 2.0, s), 1.0);
        assert_eq!(triangle_tail(2.0 + 2.0 * s, 2.0, s), 0.0);
        // Left half: 1 - (t - x + s)^2 / 2s^2.
        let t = 1.85;
        let u: f64 = t - 2.0 + s;
        assert!((triangle_tail(t, 2.0, s) - (1.0 - u * u / (2.0 * s * s))).abs() < 1e-15);
    }

    /// The tail is the integral of the density; checked with fine quadrature.
    #[test]
    fn tail_integrates_density() {
        let (x, s): (f64, f64) = (1.0, 0.2);
        for t in [0.7, 0.85, 0.95, 1.0, 1.07, 1.19, 1.3] {
            let n = 20000;
            let hi = x + s;
            let h = (hi - t).max(0.0) / n as f64;
            let integral: f64 = (0..n).map(|k| triangle_pdf(t + (k as f64 + 0.5) * h, x, s) * h).sum();
            let expected = if t < x - s { 1.0 } else { integral };
            assert!((triangle_tail(t, x, s) - expected).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn lone_view_is_always_in_front() {
        let mixes = vec![single(1.0), DepthMixture::empty(), DepthMixture::empty()];
        for s in [1, 2, 32] {
            let p = prob_front(&mixes, 0.05, s).unwrap();
            assert!((p[0] - 1.0).abs() < 1e-12);
            assert_eq!(p[1], 0.0);
        }
    }

    #[test]
    fn identical_views_split_evenly() {
        let p = prob_front(&[single(2.0), single(2.0)], 0.1, 32).unwrap();
        assert!((p[0] - 0.5).abs() < 0.01 && (p[1] - 0.5).abs() < 0.01, "{p:?}");
    }

    #[test]
    fn invalid_arguments() {
        assert!(prob_front(&[single(1.0)], 0.0, 1).is_err());
        assert!(prob_front(&[single(1.0)], 0.1, 0).is_err());
        assert!(sample_min_oracle(&[single(1.0)], 0.1, 0, 1).is_err());
    }

    #[test]
    fn oracle_basics() {
        let o = sample_min_oracle(&[single(1.0)], 0.1, 1000, 1).unwrap();
        assert_eq!(o.per_view, vec![1.0]);
        let n = 40_000;
        let o = sample_min_oracle(&[single(1.0), single(1.0)], 0.1, n, 2).unwrap();
        let tol = 3.0 / (n as f64).sqrt();
        assert!((o.per_view[0] - 0.5).abs() < tol && (o.per_view[1] - 0.5).abs() < tol);
        let mixes = vec![build_mixture([(1.0, 0.4)]), build_mixture([(1.02, 0.3), (1.5, 0.2)])];
        let o = sample_min_oracle(&mixes, 0.05, 5000, 3).unwrap();
        let total: f64 = o.per_view.iter().sum::<f64>() + o.all_infinite + o.ties;
        assert!((total - 1.0).abs() < 1e-12);
    }

    fn random_mixture(rng: &mut impl Rng) -> DepthMixture {
        let n = rng.random_range(0..4);
        let mut depths: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>() * 0.3).collect();
        depths.sort_by(f64::total_cmp);
        build_mixture(depths.into_iter().map(|d| (d, rng.random::<f64>())))
    }

    #[test]
    fn permuting_views_permutes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let mixes: Vec<DepthMixture> = (0..3).map(|_| random_mixture(&mut rng)).collect();
            let p = prob_front(&mixes, 0.05, 32).unwrap();
            let rev: Vec<DepthMixture> = mixes.iter().rev().cloned().collect();
            let q = prob_front(&rev, 0.05, 32).unwrap();
            for n in 0..3 {
                assert!((p[n] - q[2 - n]).abs() < 1e-12);
            }
            assert!(p.iter().sum::<f64>() <= 1.02);
        }
    }

    #[test]
    fn moving_closer_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..30 {
            let mixes: Vec<DepthMixture> = (0..3).map(|_| random_mixture(&mut rng)).collect();
            let before = prob_front(&mixes, 0.05, 32).unwrap()[0];
            let mut moved = mixes.clone();
            for c in &mut moved[0].components {
                c.0 -= 0.03;
            }
            let after = prob_front(&moved, 0.05, 32).unwrap()[0];
            assert!(after >= before - 1e-12, "{before} -> {after}");
        }
    }

    proptest::proptest! {
        #[test]
        fn mixture_mass_is_one(alphas in proptest::collection::vec(0.0f64..=1.0, 0..40)) {
            let m = build_mixture(alphas.iter().enumerate().map(|(i, a)| (1.0 + i as f64, *a)));
            proptest::prop_assert!((m.total_mass() - 1.0).abs() < 1e-9);
            proptest::prop_assert!(m.components.iter().all(|c| c.1 >= 0.0));
        }

        #[test]
        fn tail_is_symmetric(t in -1.0f64..3.0, x in 0.5f64..1.5, s in 0.01f64..1.0) {
            let a = triangle_tail(t, x, s) + triangle_tail(2.0 * x - t, x, s);
            proptest::prop_assert!((a - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sweep_matches_direct_survival(
            frags in proptest::collection::vec((1.0f64..2.0, 0.0f64..=1.0), 0..30),
            queries in proptest::collection::vec(0.8f64..2.2, 0..30),
            sigma in 0.001f64..0.5,
            shuffle in proptest::bool::ANY,
        ) {
            let mut frags = frags;
            frags.sort_by(|a, b| a.0.total_cmp(&b.0));
            if shuffle {
                frags.reverse();
            }
            let m = build_mixture(frags);
            let mut out = vec![f64::NAN; queries.len()];
            Sweep::new(&m).survival_at(&queries, sigma, &mut out);
            for (t, v) in queries.iter().zip(&out) {
                proptest::prop_assert!((v - m.survival(*t, sigma)).abs() < 1e-12, "t {} fast {} direct {}", t, v, m.survival(*t, sigma));
            }
        }
    }
}
