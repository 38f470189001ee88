//! Categorical sampling: inverse-CDF draws from nonnegative weights, and
//! accept-reject draws of backward indices from `w_l q(x_l, target)`.
//!
//! Indices are zero-based throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, StateSpaceModel};

/// Default number of consecutive rejections before the exact fallback.
pub const DEFAULT_REJECTION_CAP: usize = 20;

/// Nonnegative finite weights with at least one strictly positive entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    total: f64,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Sampler("empty weight vector".into()));
        }
        let mut total = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Sampler(format!("weight {i} is {w}")));
            }
            total += w;
        }
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Sampler(format!("weight total is {total}")));
        }
        Ok(WeightVector { weights, total })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform weights need at least one entry");
        WeightVector { weights: vec![1.0 / n as f64; n], total: 1.0 }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| w == w0)
    }

    /// `1 / sum(normalized^2)`.
    pub fn effective_sample_size(&self) -> f64 {
        let s2: f64 = self.weights.iter().map(|w| (w / self.total).powi(2)).sum();
        1.0 / s2
    }
}

/// One inverse-CDF draw over the running sum of `weights`.
pub fn categorical_draw<R: Rng + ?Sized>(weights: &WeightVector, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * weights.total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // u rounded up to the total
    last_positive
}

/// Prefix sums for repeated O(log N) inverse-CDF draws from one weight vector.
#[derive(Debug, Clone)]
pub struct CumulativeWeights {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl CumulativeWeights {
    pub fn new(weights: &WeightVector) -> Self {
        let mut acc = 0.0;
        let cdf: Vec<f64> = weights
            .as_slice()
            .iter()
            .map(|&w| {
                acc += w;
                acc
            })
            .collect();
        let last_positive = weights.as_slice().iter().rposition(|&w| w > 0.0).unwrap_or(0);
        CumulativeWeights { cdf, last_positive }
    }

    pub fn total(&self) -> f64 {
        *self.cdf.last().expect("non-empty")
    }

    /// Index for a uniform variate `u` in `[0, 1)`.
    #[inline]
    pub fn index_for(&self, u: f64) -> usize {
        let target = u * self.total();
        let i = self.cdf.partition_point(|&c| c <= target);
        i.min(self.last_positive)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index_for(rng.random::<f64>())
    }
}

/// What to do when a backward kernel has zero total mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneratePolicy {
    #[default]
    Error,
    /// Use the filter weights alone (ignore the transition factor) and flag.
    FilterWeights,
}

/// Counters for accept-reject backward sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawStats {
    pub draws: u64,
    pub proposals: u64,
    pub fallbacks: u64,
    /// Envelope proposals made by fallback draws.
    #[serde(default)]
    pub envelope_proposals: u64,
    /// Full O(N) constructions of the exact law.
    #[serde(default)]
    pub scans: u64,
    pub degenerate: u64,
}

impl DrawStats {
    pub fn merge(&mut self, other: &DrawStats) {
        self.draws += other.draws;
        self.proposals += other.proposals;
        self.fallbacks += other.fallbacks;
        self.envelope_proposals += other.envelope_proposals;
        self.scans += other.scans;
        self.degenerate += other.degenerate;
    }

    /// Mean number of accept-reject proposals per drawn index.
    pub fn proposals_per_draw(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.proposals as f64 / self.draws as f64
        }
    }
}

/// Smallest cloud for which fallback draws use the blocked envelope.
const MIN_BLOCKED: usize = 64;

/// Envelope proposals per fallback draw before the full scan.
const ENVELOPE_ATTEMPTS: usize = 64;

/// Particles sorted by position and cut into about `sqrt(N)` contiguous blocks,
/// each with its weight total and position range.
struct Blocks {
    order: Vec<usize>,
    /// Prefix sums of the weights in sorted order.
    cdf: Vec<f64>,
    /// Block `b` covers sorted slots `bounds[b]..bounds[b + 1]`.
    bounds: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Blocks {
    fn new(positions: &[f64], weights: &[f64]) -> Self {
        let n = positions.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| positions[a].total_cmp(&positions[b]));
        let mut acc = 0.0;
        let cdf = order
            .iter()
            .map(|&j| {
                acc += weights[j];
                acc
            })
            .collect();
        let nb = (n as f64).sqrt().ceil() as usize;
        let bounds: Vec<usize> = (0..=nb).map(|b| b * n / nb).collect();
        let lo = bounds[..nb].iter().map(|&k| positions[order[k]]).collect();
        let hi = bounds[1..].iter().map(|&k| positions[order[k - 1]]).collect();
        Blocks { order, cdf, bounds, lo, hi }
    }

    fn block_weight(&self, b: usize) -> f64 {
        let (s, e) = (self.bounds[b], self.bounds[b + 1]);
        self.cdf[e - 1] - if s == 0 { 0.0 } else { self.cdf[s - 1] }
    }

    /// Sorted slot in block `b` with probability proportional to its weight.
    fn slot_in_block(&self, b: usize, u: f64) -> usize {
        let (s, e) = (self.bounds[b], self.bounds[b + 1]);
        let base = if s == 0 { 0.0 } else { self.cdf[s - 1] };
        let target = base + u * (self.cdf[e - 1] - base);
        let k = s + self.cdf[s..e].partition_point(|&c| c <= target);
        // rounding can land past the last positive weight of the block
        let mut k = k.min(e - 1);
        while k > s && self.cdf[k] == self.cdf[k - 1] {
            k -= 1;
        }
        k
    }
}

/// Per-target envelope: block `b` is proposed with probability proportional to
/// `W_b * bound_b(target)`, where `bound_b` dominates `q(x, target)` on block `b`.
struct Envelope {
    cdf: Vec<f64>,
    bound: Vec<f64>,
}

/// Backward-index sampler for one time step: draws `J ~ Pr(w_l q(x_l, target))`
/// by proposing from the filter weights and accepting with probability
/// `q(x_J, target) / sup q`. After `cap` consecutive rejections the draw is
/// taken from the exact law. When the model bounds the transition density on
/// position intervals, that exact draw is an envelope rejection over blocks of
/// sorted particles, with an O(N) scan as the last resort; otherwise it is the
/// scan. Every branch realizes the same law.
pub struct BackwardSampler<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a ParameterVector,
    positions: &'a [f64],
    weights: &'a WeightVector,
    cdf: CumulativeWeights,
    sup: f64,
    cap: usize,
    policy: DegeneratePolicy,
    blocks: std::cell::OnceCell<Option<Blocks>>,
}

impl<'a, M: StateSpaceModel + ?Sized> BackwardSampler<'a, M> {
    pub fn new(
        model: &'a M,
        theta: &'a ParameterVector,
        positions: &'a [f64],
        weights: &'a WeightVector,
        cap: usize,
        policy: DegeneratePolicy,
    ) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::InvalidInput(format!("{} positions but {} weights", positions.len(), weights.len())));
        }
        let sup = model.transition_sup(theta);
        if !(sup.is_finite() && sup > 0.0) {
            return Err(Error::Sampler(format!("transition sup bound is {sup}")));
        }
        Ok(BackwardSampler {
            model,
            theta,
            positions,
            weights,
            cdf: CumulativeWeights::new(weights),
            sup,
            cap,
            policy,
            blocks: std::cell::OnceCell::new(),
        })
    }

    /// Appends `n_tilde` i.i.d. indices for `target` to `out`. `t` and `i`
    /// only label errors.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        target: f64,
        n_tilde: usize,
        rng: &mut R,
        out: &mut Vec<usize>,
        stats: &mut DrawStats,
        (t, i): (usize, usize),
    ) -> Result<()> {
        let mut envelope: Option<Option<Envelope>> = None;
        let mut exact: Option<CumulativeWeights> = None;
        'draws: for _ in 0..n_tilde {
            stats.draws += 1;
            for _ in 0..self.cap {
                stats.proposals += 1;
                let l = self.cdf.sample(rng);
                let q = self.model.transition_density(self.theta, self.positions[l], target);
                if q > self.sup * (1.0 + 1e-12) {
                    return Err(Error::Invariant(format!(
                        "transition density {q} exceeds its bound {} at ({}, {target})",
                        self.sup, self.positions[l]
                    )));
                }
                if rng.random::<f64>() * self.sup < q {
                    out.push(l);
                    continue 'draws;
                }
            }
            stats.fallbacks += 1;
            if exact.is_none() {
                let env = envelope.get_or_insert_with(|| self.envelope(target));
                if let Some(env) = env {
                    if let Some(l) = self.envelope_draw(env, target, rng, stats)? {
                        out.push(l);
                        continue 'draws;
                    }
                }
                stats.scans += 1;
                exact = Some(self.exact_law(target, stats, (t, i))?);
            }
            out.push(exact.as_ref().expect("built above").sample(rng));
        }
        Ok(())
    }

    fn envelope(&self, target: f64) -> Option<Envelope> {
        let blocks = self
            .blocks
            .get_or_init(|| {
                let n = self.positions.len();
                let supported =
                    self.model.transition_bound(self.theta, self.positions[0], self.positions[0], target).is_some();
                (n >= MIN_BLOCKED && supported).then(|| Blocks::new(self.positions, self.weights.as_slice()))
            })
            .as_ref()?;
        let nb = blocks.lo.len();
        let mut cdf = Vec::with_capacity(nb);
        let mut bound = Vec::with_capacity(nb);
        let mut acc = 0.0;
        for b in 0..nb {
            let m = self.model.transition_bound(self.theta, blocks.lo[b], blocks.hi[b], target)?;
            let m = m * (1.0 + 1e-12);
            acc += blocks.block_weight(b) * m;
            cdf.push(acc);
            bound.push(m);
        }
        (acc > 0.0 && acc.is_finite()).then_some(Envelope { cdf, bound })
    }

    /// One exact draw by envelope rejection, or `None` after `ENVELOPE_ATTEMPTS`
    /// rejections.
    fn envelope_draw<R: Rng + ?Sized>(
        &self,
        env: &Envelope,
        target: f64,
        rng: &mut R,
        stats: &mut DrawStats,
    ) -> Result<Option<usize>> {
        let blocks = self.blocks.get().and_then(Option::as_ref).expect("envelope implies blocks");
        let total = *env.cdf.last().expect("non-empty");
        for _ in 0..ENVELOPE_ATTEMPTS {
            stats.envelope_proposals += 1;
            let u = rng.random::<f64>() * total;
            let mut b = env.cdf.partition_point(|&c| c <= u).min(env.cdf.len() - 1);
            while b > 0 && env.cdf[b] == env.cdf[b - 1] {
                b -= 1;
            }
            let l = blocks.order[blocks.slot_in_block(b, rng.random::<f64>())];
            let q = self.model.transition_density(self.theta, self.positions[l], target);
            if q > env.bound[b] {
                return Err(Error::Invariant(format!(
                    "transition density {q} exceeds its block bound {} at ({}, {target})",
                    env.bound[b], self.positions[l]
                )));
            }
            if rng.random::<f64>() * env.bound[b] < q {
                return Ok(Some(l));
            }
        }
        Ok(None)
    }

    fn exact_law(&self, target: f64, stats: &mut DrawStats, (t, i): (usize, usize)) -> Result<CumulativeWeights> {
        let w: Vec<f64> = self
            .positions
            .iter()
            .zip(self.weights.as_slice())
            .map(|(&x, &w)| w * self.model.transition_density(self.theta, x, target))
            .collect();
        match WeightVector::new(w) {
            Ok(w) => Ok(CumulativeWeights::new(&w)),
            Err(_) => match self.policy {
                DegeneratePolicy::Error => Err(Error::BackwardDegenerate { t, i }),
                DegeneratePolicy::FilterWeights => {
                    stats.degenerate += 1;
                    Ok(self.cdf.clone())
                }
            },
        }
    }
}

/// Draws `n_tilde` backward indices for one target position.
#[allow(clippy::too_many_arguments)]
pub fn backward_indices<M: StateSpaceModel + ?Sized, R: Rng + ?Sized>(
    prev_positions: &[f64],
    prev_weights: &WeightVector,
    target: f64,
    theta: &ParameterVector,
    model: &M,
    n_tilde: usize,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n_tilde == 0 {
        return Err(Error::InvalidInput("n_tilde must be >= 1".into()));
    }
    let sampler = BackwardSampler::new(model, theta, prev_positions, prev_weights, cap, DegeneratePolicy::Error)?;
    let mut out = Vec::with_capacity(n_tilde);
    sampler.draw(target, n_tilde, rng, &mut out, &mut DrawStats::default(), (0, 0))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SvModel;
    use crate::rng::{Purpose, Streams};

    fn rng(k: usize) -> crate::rng::RngStream {
        Streams::new(99).stream(0, k, Purpose::Test)
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.0, 0.0]).is_err());
        assert!(WeightVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(WeightVector::new(vec![1.0, -0.5]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        let w = WeightVector::new(vec![1.0, 3.0]).unwrap();
        assert_eq!(w.total(), 4.0);
        assert!((WeightVector::uniform(4).effective_sample_size() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mass_always_drawn() {
        let w = WeightVector::new(vec![0.0, 5.0, 0.0]).unwrap();
        let cdf = CumulativeWeights::new(&w);
        let mut r = rng(0);
        for _ in 0..1000 {
            assert_eq!(categorical_draw(&w, &mut r), 1);
            assert_eq!(cdf.sample(&mut r), 1);
        }
        // extreme uniform variates
        assert_eq!(cdf.index_for(0.0), 1);
        assert_eq!(cdf.index_for(1.0 - f64::EPSILON), 1);
        assert_eq!(cdf.index_for(1.0), 1);
    }

    #[test]
    fn two_point_frequency() {
        let w = WeightVector::new(vec![1.0, 3.0]).unwrap();
        let mut r = rng(1);
        let n = 100_000;
        let hits = (0..n).filter(|_| categorical_draw(&w, &mut r) == 1).count();
        let p = hits as f64 / n as f64;
        let se = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn single_support_backward() {
        let m = SvModel::default();
        let th = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let w = WeightVector::new(vec![0.3]).unwrap();
        let j = backward_indices(&[0.4], &w, 5.0, &th, &m, 7, 20, &mut rng(2)).unwrap();
        assert_eq!(j, vec![0; 7]);
    }

    #[test]
    fn zero_n_tilde_rejected() {
        let m = SvModel::default();
        let th = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let w = WeightVector::uniform(2);
        assert!(backward_indices(&[0.0, 1.0], &w, 0.0, &th, &m, 0, 20, &mut rng(3)).is_err());
    }

    #[test]
    fn degenerate_backward_kernel() {
        let m = SvModel::default();
        let th = ParameterVector::new(vec![0.5, 1e-4, 1.0]).unwrap();
        let pos = [0.0, 0.1];
        let w = WeightVector::uniform(2);
        let err = backward_indices(&pos, &w, 50.0, &th, &m, 2, 3, &mut rng(4)).unwrap_err();
        assert!(matches!(err, Error::BackwardDegenerate { .. }));

        let s = BackwardSampler::new(&m, &th, &pos, &w, 3, DegeneratePolicy::FilterWeights).unwrap();
        let mut out = vec![];
        let mut stats = DrawStats::default();
        s.draw(50.0, 2, &mut rng(5), &mut out, &mut stats, (0, 0)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(stats.degenerate, 1);
        assert_eq!(stats.fallbacks, 2);
    }

    /// A model whose transition density lies above its advertised bound.
    struct BadBound(SvModel);

    impl StateSpaceModel for BadBound {
        fn id(&self) -> &'static str {
            "bad"
        }
        fn param_names(&self) -> &'static [&'static str] {
            self.0.param_names()
        }
        fn constraints(&self) -> &crate::model::ConstraintSet {
            self.0.constraints()
        }
        fn validate(&self, theta: &ParameterVector) -> Result<()> {
            self.0.validate(theta)
        }
        fn sample_initial<R: Rng + ?Sized>(&self, theta: &ParameterVector, rng: &mut R) -> f64 {
            self.0.sample_initial(theta, rng)
        }
        fn sample_transition<R: Rng + ?Sized>(&self, theta: &ParameterVector, x: f64, rng: &mut R) -> f64 {
            self.0.sample_transition(theta, x, rng)
        }
        fn transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64 {
            self.0.transition_density(theta, x, x_next)
        }
        fn transition_sup(&self, theta: &ParameterVector) -> f64 {
            0.1 * self.0.transition_sup(theta)
        }
        fn emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64 {
            self.0.emission_density(theta, x, y)
        }
        fn grad_log_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]) {
            self.0.grad_log_emission(theta, x, y, out)
        }
        fn grad_log_transition(&self, theta: &ParameterVector, x: f64, x_next: f64, out: &mut [f64]) {
            self.0.grad_log_transition(theta, x, x_next, out)
        }
    }

    #[test]
    fn fallback_uses_envelope_when_bounds_exist() {
        let th = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let x: Vec<f64> = (0..400).map(|k| -2.0 + 0.01 * k as f64).collect();
        let w = WeightVector::uniform(x.len());
        let mut stats = DrawStats::default();
        let mut out = Vec::new();
        let sv = SvModel::default();
        let s = BackwardSampler::new(&sv, &th, &x, &w, 0, DegeneratePolicy::Error).unwrap();
        s.draw(3.0, 50, &mut rng(7), &mut out, &mut stats, (0, 0)).unwrap();
        assert_eq!((stats.fallbacks, stats.scans), (50, 0));
        assert!(out.iter().all(|&j| x[j] > 1.0));
        // without interval bounds every fallback target costs one scan
        let m = BadBound(SvModel::default());
        let s = BackwardSampler::new(&m, &th, &x, &w, 0, DegeneratePolicy::Error).unwrap();
        let mut stats = DrawStats::default();
        s.draw(3.0, 50, &mut rng(8), &mut out, &mut stats, (0, 0)).unwrap();
        assert_eq!((stats.fallbacks, stats.scans, stats.envelope_proposals), (50, 1, 0));
    }

    #[test]
    fn sup_violation_is_reported() {
        let m = BadBound(SvModel::default());
        let th = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let w = WeightVector::uniform(3);
        let err = backward_indices(&[0.0, 0.0, 0.0], &w, 0.0, &th, &m, 1, 20, &mut rng(6)).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }
}
