//! Oracle agreement checks: Kalman sensitivities against finite differences,
//! Kalman likelihood against the dense joint Gaussian density, and model
//! gradients against finite differences of the log-densities.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kalman::{self, fd_score, log_likelihood, total_score, KalmanState, LgssmSpec};
use crate::model::{LgssmModel, ParameterVector, StateSpaceModel, SvModel};
use crate::rng::{Purpose, RngStream, Streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub metric: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_instance: Vec<f64>,
}

impl CheckResult {
    fn below(name: impl Into<String>, metric: &str, per_instance: Vec<f64>, threshold: f64) -> Self {
        let value = per_instance.iter().copied().fold(0.0, f64::max);
        let pass = per_instance.iter().all(|v| v.is_finite()) && value < threshold;
        CheckResult { name: name.into(), metric: metric.into(), value, threshold, pass, per_instance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub all_pass: bool,
    pub checks: Vec<CheckResult>,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_spec(rng: &mut RngStream) -> LgssmSpec {
    LgssmSpec {
        phi: uniform(rng, -0.9, 0.9),
        sigma2: uniform(rng, 0.1, 2.0),
        obs_coef: uniform(rng, 0.3, 2.0),
        beta2: uniform(rng, 0.1, 2.0),
    }
}

/// Sensitivity score vs central differences of the total log-likelihood,
/// `instances` random specs with `steps` observations each.
pub fn kalman_fd_check(instances: usize, steps: usize, seed: u64) -> Result<CheckResult> {
    let streams = Streams::new(seed);
    let mut errs = Vec::with_capacity(instances);
    for k in 0..instances {
        let spec = random_spec(&mut streams.stream(0, k, Purpose::Test));
        let (_, y) = kalman::simulate(&spec, steps - 1, seed.wrapping_add(k as u64))?;
        let exact = total_score(&spec, &y)?;
        let fd = fd_score(&spec, &y, 1e-5)?;
        errs.push((0..3).map(|a| rel_err(exact[a], fd[a], 1e-6)).fold(0.0, f64::max));
    }
    Ok(CheckResult::below("kalman_score_vs_finite_differences", "max_rel_error", errs, 1e-4))
}

/// Cholesky log-density of `N(0, cov)` at `y`.
pub fn dense_gaussian_loglik(cov: &[Vec<f64>], y: &[f64]) -> Option<f64> {
    let n = y.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // solve L z = y
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (y[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let logdet: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Some(-0.5 * (n as f64 * crate::model::LN_2PI + logdet + quad))
}

/// Stationary covariance of `(Y_0, ..., Y_{n-1})`.
pub fn lgssm_covariance(spec: &LgssmSpec, n: usize) -> Vec<Vec<f64>> {
    let p0 = spec.sigma2 / (1.0 - spec.phi * spec.phi);
    let c2 = spec.obs_coef * spec.obs_coef;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let lag = i.abs_diff(j) as i32;
                    c2 * p0 * spec.phi.powi(lag) + if i == j { spec.beta2 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

/// Kalman log-likelihood vs the dense joint density, `instances` specs of length `steps`.
pub fn kalman_dense_check(instances: usize, steps: usize, seed: u64) -> Result<CheckResult> {
    let streams = Streams::new(seed);
    let mut errs = Vec::with_capacity(instances);
    for k in 0..instances {
        let spec = random_spec(&mut streams.stream(1, k, Purpose::Test));
        let (_, y) = kalman::simulate(&spec, steps - 1, seed.wrapping_add(100 + k as u64))?;
        let dense = dense_gaussian_loglik(&lgssm_covariance(&spec, steps), &y).unwrap_or(f64::NAN);
        errs.push((log_likelihood(&spec, &y)? - dense).abs());
    }
    Ok(CheckResult::below("kalman_loglik_vs_dense_covariance", "max_abs_diff", errs, 1e-8))
}

/// Long-run average of the per-step score at the true parameter, in units of
/// its estimated standard error (componentwise maximum).
pub fn kalman_martingale_check(steps: usize, seed: u64) -> Result<CheckResult> {
    let spec = LgssmSpec::new(0.8, 0.1, 1.0, 1.0)?;
    let (_, y) = kalman::simulate(&spec, steps - 1, seed)?;
    let inc = kalman::score_increments(&spec, &y, KalmanState::stationary(&spec))?;
    let n = inc.len() as f64;
    let z: Vec<f64> = (0..3)
        .map(|a| {
            let mean = inc.iter().map(|s| s[a]).sum::<f64>() / n;
            let var = inc.iter().map(|s| (s[a] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            mean.abs() / (var / n).sqrt()
        })
        .collect();
    Ok(CheckResult::below("kalman_score_mean_zero_at_truth", "max_standard_errors", z, 3.0))
}

fn perturbed(theta: &[f64], k: usize, h: f64) -> ParameterVector {
    let mut v = theta.to_vec();
    v[k] += h;
    ParameterVector::new(v).expect("finite")
}

/// Analytic gradients of `model` vs central differences (step `1e-6`) of its
/// log-densities at `points` random interior points; also the chain-rule
/// identity for `grad g` and domination of the transition density by its bound.
pub fn gradient_checks<M: StateSpaceModel>(model: &M, label: &str, points: usize, seed: u64) -> Vec<CheckResult> {
    let streams = Streams::new(seed);
    let h = 1e-6;
    let d = model.dim();
    let (mut tr, mut em, mut chain) = (Vec::new(), Vec::new(), Vec::new());
    let mut sup_violation = Vec::new();
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    for p in 0..points {
        let mut rng = streams.stream(2, p, Purpose::Test);
        let th = vec![uniform(&mut rng, -0.95, 0.95), uniform(&mut rng, 0.05, 2.0), uniform(&mut rng, 0.1, 3.0)];
        let theta = ParameterVector::new(th.clone()).expect("finite");
        let x = uniform(&mut rng, -2.0, 2.0);
        let z: f64 = rng.sample(StandardNormal);
        let x_next = th[0] * x + th[1].sqrt() * z;
        let y = uniform(&mut rng, -3.0, 3.0);

        model.grad_log_transition(&theta, x, x_next, &mut ga);
        model.grad_log_emission(&theta, x, y, &mut gb);
        let (mut et, mut ee) = (0.0f64, 0.0f64);
        for k in 0..d {
            let fd_t = (model.log_transition_density(&perturbed(&th, k, h), x, x_next)
                - model.log_transition_density(&perturbed(&th, k, -h), x, x_next))
                / (2.0 * h);
            let fd_e = (model.log_emission_density(&perturbed(&th, k, h), x, y)
                - model.log_emission_density(&perturbed(&th, k, -h), x, y))
                / (2.0 * h);
            et = et.max(rel_err(ga[k], fd_t, 1e-3));
            ee = ee.max(rel_err(gb[k], fd_e, 1e-3));
        }
        tr.push(et);
        em.push(ee);

        let g = model.emission_density(&theta, x, y);
        model.grad_emission(&theta, x, y, &mut ga);
        chain.push((0..d).map(|k| rel_err(ga[k], g * gb[k], 1e-300)).fold(0.0, f64::max));

        let sup = model.transition_sup(&theta);
        let worst = (0..20)
            .map(|_| {
                let a = uniform(&mut rng, -3.0, 3.0);
                let b = uniform(&mut rng, -3.0, 3.0);
                model.transition_density(&theta, a, b) / sup
            })
            .chain(std::iter::once(model.transition_density(&theta, x, th[0] * x) / sup))
            .fold(0.0, f64::max);
        sup_violation.push((worst - 1.0).max(0.0));
    }
    vec![
        CheckResult::below(format!("{label}_grad_log_transition_vs_fd"), "max_rel_error", tr, 1e-4),
        CheckResult::below(format!("{label}_grad_log_emission_vs_fd"), "max_rel_error", em, 1e-4),
        CheckResult::below(format!("{label}_grad_emission_chain_rule"), "max_rel_error", chain, 1e-12),
        CheckResult::below(format!("{label}_transition_sup_dominates"), "max_excess_ratio", sup_violation, 1e-12),
    ]
}

pub fn run_all(seed: u64) -> Result<OracleReport> {
    let mut checks = vec![
        kalman_fd_check(20, 100, seed)?,
        kalman_dense_check(5, 50, seed)?,
        kalman_martingale_check(100_000, seed)?,
    ];
    checks.extend(gradient_checks(&SvModel::default(), "sv", 500, seed));
    checks.extend(gradient_checks(&LgssmModel::new(1.0), "lgssm", 500, seed));
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(OracleReport { seed, all_pass, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_loglik_of_identity_covariance() {
        let cov = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ll = dense_gaussian_loglik(&cov, &[0.0, 0.0]).unwrap();
        assert!((ll + crate::model::LN_2PI).abs() < 1e-14);
        assert!(dense_gaussian_loglik(&[vec![-1.0]], &[0.0]).is_none());
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0, 1e-3), 0.0);
        assert!((rel_err(1e-9, 0.0, 1e-3) - 1e-6).abs() < 1e-18);
    }
}
