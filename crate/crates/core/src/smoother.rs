//! Per-particle tangent-filter statistics `tau_t^i`, the particle estimates of
//! `E[Q_t(X_{0:t}) | X_t = x_t^i, y_{0:t-1}]` for the additive score
//! functional `Q_t`.
//!
//! [`paris_update`] replaces the backward-kernel sum with `n_tilde` sampled
//! backward indices per particle (linear cost); [`quadratic_update`] computes
//! the full sum over all ancestors (quadratic cost).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::ParticleCloud;
use crate::model::{InitialTerm, ParameterVector, StateSpaceModel};
use crate::rng::{Purpose, Streams};
use crate::sampling::{BackwardSampler, DegeneratePolicy, DrawStats, WeightVector};

const MAX_DIM: usize = 8;

/// Dense `N x d` matrix of tangent statistics at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauStats {
    data: Vec<f64>,
    n: usize,
    dim: usize,
    t: usize,
}

impl TauStats {
    pub fn zeros(n: usize, dim: usize) -> Self {
        assert!(dim <= MAX_DIM, "parameter dimension {dim} exceeds {MAX_DIM}");
        TauStats { data: vec![0.0; n * dim], n, dim, t: 0 }
    }

    pub fn at(mut self, t: usize) -> Self {
        self.t = t;
        self
    }

    pub fn from_rows(rows: &[Vec<f64>], t: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 || dim > MAX_DIM || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("tau rows must be non-empty with equal length".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tau rows must be finite".into()));
        }
        Ok(TauStats { data, n: rows.len(), dim, t })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        tau_mean(self)
    }
}

/// Arithmetic mean of the rows.
pub fn tau_mean(tau: &TauStats) -> Vec<f64> {
    let mut m = vec![0.0; tau.dim];
    for row in tau.data.chunks_exact(tau.dim) {
        m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= tau.n as f64);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherOptions {
    /// Backward draws per particle for the PaRIS update.
    pub n_tilde: usize,
    /// Consecutive accept-reject rejections before the exact fallback.
    pub rejection_cap: usize,
    pub on_degenerate: DegeneratePolicy,
    pub initial_term: InitialTerm,
}

impl Default for SmootherOptions {
    fn default() -> Self {
        SmootherOptions {
            n_tilde: 2,
            rejection_cap: crate::sampling::DEFAULT_REJECTION_CAP,
            on_degenerate: DegeneratePolicy::Error,
            initial_term: InitialTerm::WithTransition,
        }
    }
}

/// Sampling counters and degeneracy count for one smoother update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SmootherReport {
    pub draws: DrawStats,
    /// Target particles whose backward kernel had zero mass.
    pub degenerate_rows: u64,
}

fn check_alignment(tau: &TauStats, prev: &ParticleCloud, next: &ParticleCloud) -> Result<()> {
    if tau.n != prev.len() || prev.len() != next.len() {
        return Err(Error::InvalidInput(format!(
            "size mismatch: tau {}, previous cloud {}, next cloud {}",
            tau.n,
            prev.len(),
            next.len()
        )));
    }
    if tau.t != prev.t() || next.t() != prev.t() + 1 {
        return Err(Error::InvalidInput(format!(
            "time mismatch: tau.t = {}, previous cloud t = {}, next cloud t = {}",
            tau.t,
            prev.t(),
            next.t()
        )));
    }
    Ok(())
}

/// Rows `tau_t^j + grad log g(x_t^j, y_t)`: the part of each backward summand
/// that does not depend on the target particle.
fn forward_part<M: StateSpaceModel + ?Sized>(
    tau: &TauStats,
    prev: &ParticleCloud,
    y: f64,
    theta: &ParameterVector,
    model: &M,
) -> Vec<f64> {
    let d = tau.dim;
    let mut out = tau.data.clone();
    let mut g = [0.0; MAX_DIM];
    for (j, &x) in prev.positions().iter().enumerate() {
        model.grad_log_emission(theta, x, y, &mut g[..d]);
        out[j * d..(j + 1) * d].iter_mut().zip(&g[..d]).for_each(|(o, v)| *o += v);
    }
    out
}

fn include_transition(t: usize, initial: InitialTerm) -> bool {
    t > 0 || initial == InitialTerm::WithTransition
}

fn finite_row(row: &[f64], t: usize, i: usize) -> Result<()> {
    if row.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "additive score term", t, i })
    }
}

/// PaRIS update: for each target particle `i`, average `tau_t^J + s_t(x_t^J, x_{t+1}^i)`
/// over `n_tilde` backward indices `J ~ Pr(w_t^l q(x_t^l, x_{t+1}^i))`. Target `i`
/// draws from stream `(seed, t, i, Backward)`.
#[allow(clippy::too_many_arguments)]
pub fn paris_update<M: StateSpaceModel + ?Sized>(
    tau: &TauStats,
    prev_cloud: &ParticleCloud,
    next_cloud: &ParticleCloud,
    y: f64,
    theta: &ParameterVector,
    model: &M,
    opts: &SmootherOptions,
    streams: &Streams,
) -> Result<(TauStats, SmootherReport)> {
    check_alignment(tau, prev_cloud, next_cloud)?;
    if opts.n_tilde == 0 {
        return Err(Error::InvalidInput("n_tilde must be >= 1".into()));
    }
    let (n, d, t) = (tau.n, tau.dim, tau.t);
    let base = forward_part(tau, prev_cloud, y, theta, model);
    let with_tr = include_transition(t, opts.initial_term);
    let prev_x = prev_cloud.positions();
    let sampler =
        BackwardSampler::new(model, theta, prev_x, prev_cloud.weights(), opts.rejection_cap, opts.on_degenerate)?;

    let mut report = SmootherReport::default();
    let mut data = vec![0.0; n * d];
    let mut idx = Vec::with_capacity(opts.n_tilde);
    let mut g = [0.0; MAX_DIM];
    let scale = 1.0 / opts.n_tilde as f64;
    for (i, &target) in next_cloud.positions().iter().enumerate() {
        idx.clear();
        let before = report.draws.degenerate;
        let mut rng = streams.stream(t, i, Purpose::Backward);
        sampler.draw(target, opts.n_tilde, &mut rng, &mut idx, &mut report.draws, (t, i))?;
        if report.draws.degenerate > before {
            report.degenerate_rows += 1;
        }
        let row = &mut data[i * d..(i + 1) * d];
        for &j in &idx {
            row.iter_mut().zip(&base[j * d..(j + 1) * d]).for_each(|(o, v)| *o += v);
            if with_tr {
                model.grad_log_transition(theta, prev_x[j], target, &mut g[..d]);
                row.iter_mut().zip(&g[..d]).for_each(|(o, v)| *o += v);
            }
        }
        row.iter_mut().for_each(|v| *v *= scale);
        finite_row(row, t, i)?;
    }
    Ok((TauStats { data, n, dim: d, t: t + 1 }, report))
}

/// Quadratic-cost update with the full particle backward kernel:
/// `tau_{t+1}^i = sum_j w_t^j q(x_t^j, x_{t+1}^i) (tau_t^j + s_t(x_t^j, x_{t+1}^i)) / sum_l w_t^l q(x_t^l, x_{t+1}^i)`.
pub fn quadratic_update<M: StateSpaceModel + ?Sized>(
    tau: &TauStats,
    prev_cloud: &ParticleCloud,
    next_cloud: &ParticleCloud,
    y: f64,
    theta: &ParameterVector,
    model: &M,
    opts: &SmootherOptions,
) -> Result<(TauStats, SmootherReport)> {
    check_alignment(tau, prev_cloud, next_cloud)?;
    let (n, d, t) = (tau.n, tau.dim, tau.t);
    let base = forward_part(tau, prev_cloud, y, theta, model);
    let with_tr = include_transition(t, opts.initial_term);
    let prev_x = prev_cloud.positions();
    let prev_w = prev_cloud.weights().as_slice();

    let mut report = SmootherReport::default();
    let mut data = vec![0.0; n * d];
    let mut g = [0.0; MAX_DIM];
    let mut acc = [0.0; MAX_DIM];
    for (i, &target) in next_cloud.positions().iter().enumerate() {
        let mut norm = 0.0;
        acc[..d].iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let w = prev_w[j] * model.transition_density(theta, prev_x[j], target);
            if w == 0.0 {
                continue;
            }
            norm += w;
            let b = &base[j * d..(j + 1) * d];
            if with_tr {
                model.grad_log_transition(theta, prev_x[j], target, &mut g[..d]);
                for k in 0..d {
                    acc[k] += w * (b[k] + g[k]);
                }
            } else {
                for k in 0..d {
                    acc[k] += w * b[k];
                }
            }
        }
        if norm <= 0.0 || !norm.is_finite() {
            match opts.on_degenerate {
                DegeneratePolicy::Error => return Err(Error::BackwardDegenerate { t, i }),
                DegeneratePolicy::FilterWeights => {
                    report.degenerate_rows += 1;
                    norm = 0.0;
                    acc[..d].iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..n {
                        let w = prev_w[j];
                        norm += w;
                        let b = &base[j * d..(j + 1) * d];
                        if with_tr {
                            model.grad_log_transition(theta, prev_x[j], target, &mut g[..d]);
                        }
                        for k in 0..d {
                            acc[k] += w * (b[k] + if with_tr { g[k] } else { 0.0 });
                        }
                    }
                }
            }
        }
        let row = &mut data[i * d..(i + 1) * d];
        row.iter_mut().zip(&acc[..d]).for_each(|(o, a)| *o = a / norm);
        finite_row(row, t, i)?;
    }
    Ok((TauStats { data, n, dim: d, t: t + 1 }, report))
}

/// Path-space update along the resampling genealogy:
/// `tau_{t+1}^i = tau_t^{a_i} + s_t(x_t^{a_i}, x_{t+1}^i)`.
/// This is the degenerate-genealogy control for stability comparisons.
#[allow(clippy::too_many_arguments)]
pub fn genealogy_update<M: StateSpaceModel + ?Sized>(
    tau: &TauStats,
    prev_cloud: &ParticleCloud,
    next_cloud: &ParticleCloud,
    ancestors: &[usize],
    y: f64,
    theta: &ParameterVector,
    model: &M,
    initial: InitialTerm,
) -> Result<TauStats> {
    check_alignment(tau, prev_cloud, next_cloud)?;
    let (n, d, t) = (tau.n, tau.dim, tau.t);
    if ancestors.len() != n {
        return Err(Error::InvalidInput("ancestor vector length differs from cloud size".into()));
    }
    let base = forward_part(tau, prev_cloud, y, theta, model);
    let with_tr = include_transition(t, initial);
    let mut data = vec![0.0; n * d];
    let mut g = [0.0; MAX_DIM];
    for (i, (&target, &a)) in next_cloud.positions().iter().zip(ancestors).enumerate() {
        let row = &mut data[i * d..(i + 1) * d];
        row.copy_from_slice(&base[a * d..(a + 1) * d]);
        if with_tr {
            model.grad_log_transition(theta, prev_cloud.positions()[a], target, &mut g[..d]);
            row.iter_mut().zip(&g[..d]).for_each(|(o, v)| *o += v);
        }
        finite_row(row, t, i)?;
    }
    Ok(TauStats { data, n, dim: d, t: t + 1 })
}

/// Exact backward weights `w_t^j q(x_t^j, target)`, normalized.
pub fn backward_law<M: StateSpaceModel + ?Sized>(
    prev_cloud: &ParticleCloud,
    target: f64,
    theta: &ParameterVector,
    model: &M,
) -> Result<WeightVector> {
    let w = prev_cloud
        .positions()
        .iter()
        .zip(prev_cloud.weights().as_slice())
        .map(|(&x, &w)| w * model.transition_density(theta, x, target))
        .collect();
    WeightVector::new(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{propagate, weight_cloud, Resampling};
    use crate::model::SvModel;

    fn theta() -> ParameterVector {
        ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap()
    }

    fn clouds(n: usize, seed: u64, t: usize) -> (ParticleCloud, ParticleCloud) {
        let m = SvModel::default();
        let s = Streams::new(seed);
        let xs: Vec<f64> = (0..n).map(|i| ((i as f64 * 0.77).sin()) * 0.6).collect();
        let c = ParticleCloud::from_positions(xs, t).unwrap();
        let c = weight_cloud(&c, 0.4, &theta(), &m).unwrap();
        let (next, _) = propagate(&c, &theta(), &m, &s, Resampling::Multinomial).unwrap();
        (c, next)
    }

    fn tau_at(n: usize, t: usize, f: impl Fn(usize, usize) -> f64) -> TauStats {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..3).map(|k| f(i, k)).collect()).collect();
        TauStats::from_rows(&rows, t).unwrap()
    }

    #[test]
    fn single_particle_reduces_to_additive_term() {
        let m = SvModel::default();
        let (prev, next) = clouds(1, 2, 3);
        let tau = tau_at(1, 3, |_, k| k as f64);
        let opts = SmootherOptions::default();
        let (p, _) = paris_update(&tau, &prev, &next, 0.4, &theta(), &m, &opts, &Streams::new(4)).unwrap();
        let (q, _) = quadratic_update(&tau, &prev, &next, 0.4, &theta(), &m, &opts).unwrap();
        let mut s = [0.0; 3];
        crate::model::additive_term(
            &m,
            &theta(),
            3,
            prev.positions()[0],
            next.positions()[0],
            0.4,
            InitialTerm::WithTransition,
            &mut s,
        );
        for k in 0..3 {
            let want = k as f64 + s[k];
            assert!((p.row(0)[k] - want).abs() < 1e-12);
            assert!((q.row(0)[k] - want).abs() < 1e-12);
        }
        assert_eq!(p.t(), 4);
    }

    #[test]
    fn tau_mean_examples() {
        let t = tau_at(4, 0, |_, k| [1.5, -2.0, 0.25][k]);
        assert_eq!(tau_mean(&t), vec![1.5, -2.0, 0.25]);
        let t = tau_at(2, 0, |i, k| if i == 0 { k as f64 + 1.0 } else { -(k as f64) - 1.0 });
        assert_eq!(tau_mean(&t), vec![0.0; 3]);
    }

    #[test]
    fn zeros_at_start() {
        let t = TauStats::zeros(5, 3);
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(t.t(), 0);
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let m = SvModel::default();
        let (prev, next) = clouds(4, 1, 2);
        let opts = SmootherOptions::default();
        let wrong_t = tau_at(4, 1, |_, _| 0.0);
        assert!(quadratic_update(&wrong_t, &prev, &next, 0.0, &theta(), &m, &opts).is_err());
        let wrong_n = tau_at(3, 2, |_, _| 0.0);
        assert!(paris_update(&wrong_n, &prev, &next, 0.0, &theta(), &m, &opts, &Streams::new(1)).is_err());
    }

    #[test]
    fn paris_is_deterministic_per_seed() {
        let m = SvModel::default();
        let (prev, next) = clouds(30, 3, 5);
        let tau = tau_at(30, 5, |i, k| (i * 3 + k) as f64 * 0.01);
        let opts = SmootherOptions::default();
        let a = paris_update(&tau, &prev, &next, 0.4, &theta(), &m, &opts, &Streams::new(7)).unwrap();
        let b = paris_update(&tau, &prev, &next, 0.4, &theta(), &m, &opts, &Streams::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quadratic_degenerate_row() {
        let m = SvModel::default();
        let th = ParameterVector::new(vec![0.5, 1e-4, 1.0]).unwrap();
        let prev = ParticleCloud::from_positions(vec![0.0, 0.1], 1).unwrap();
        let next = ParticleCloud::from_positions(vec![0.0, 60.0], 2).unwrap();
        let tau = tau_at(2, 1, |i, _| i as f64);
        let mut opts = SmootherOptions::default();
        assert!(matches!(
            quadratic_update(&tau, &prev, &next, 0.0, &th, &m, &opts),
            Err(Error::BackwardDegenerate { t: 1, i: 1 })
        ));
        opts.on_degenerate = DegeneratePolicy::FilterWeights;
        let (q, rep) = quadratic_update(&tau, &prev, &next, 0.0, &th, &m, &opts).unwrap();
        assert_eq!(rep.degenerate_rows, 1);
        assert!(q.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn genealogy_follows_ancestors() {
        let m = SvModel::default();
        let (prev, next) = clouds(3, 1, 2);
        let tau = tau_at(3, 2, |i, _| 10.0 * i as f64);
        let g =
            genealogy_update(&tau, &prev, &next, &[2, 2, 0], 0.4, &theta(), &m, InitialTerm::WithTransition).unwrap();
        let mut s = [0.0; 3];
        crate::model::additive_term(
            &m,
            &theta(),
            2,
            prev.positions()[2],
            next.positions()[1],
            0.4,
            InitialTerm::WithTransition,
            &mut s,
        );
        assert!((g.row(1)[0] - (20.0 + s[0])).abs() < 1e-12);
    }
}
