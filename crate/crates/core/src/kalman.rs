//! Exact filtering, log-likelihood and score for the scalar linear-Gaussian
//! model `X_{t+1} = phi X_t + sigma V_{t+1}`, `Y_t = c X_t + beta U_t`, with
//! parameters `(phi, sigma2, beta2)` and stationary initialization.
//!
//! [`kalman_score_step`] carries the sensitivities of the predictive mean and
//! variance through the recursion; [`fd_score`] is an independent central
//! finite-difference route through [`kalman_step`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, LN_2PI};
use crate::rng::{Purpose, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgssmSpec {
    pub phi: f64,
    pub sigma2: f64,
    pub obs_coef: f64,
    pub beta2: f64,
}

impl LgssmSpec {
    pub fn new(phi: f64, sigma2: f64, obs_coef: f64, beta2: f64) -> Result<Self> {
        let s = LgssmSpec { phi, sigma2, obs_coef, beta2 };
        s.validate()?;
        Ok(s)
    }

    pub fn from_theta(theta: &ParameterVector, obs_coef: f64) -> Result<Self> {
        if theta.len() != 3 {
            return Err(Error::InvalidInput("expected (phi, sigma2, beta2)".into()));
        }
        Self::new(theta[0], theta[1], obs_coef, theta[2])
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.phi, self.sigma2, self.obs_coef, self.beta2].iter().all(|v| v.is_finite());
        if !finite || self.phi.abs() >= 1.0 || self.sigma2 <= 0.0 || self.beta2 <= 0.0 {
            return Err(Error::Domain(format!("invalid linear-Gaussian spec {self:?}")));
        }
        Ok(())
    }

    pub fn theta(&self) -> [f64; 3] {
        [self.phi, self.sigma2, self.beta2]
    }

    fn with_theta(&self, th: [f64; 3]) -> Result<Self> {
        Self::new(th[0], th[1], self.obs_coef, th[2])
    }
}

/// Predictive mean and variance of `X_t` given `y_{0:t-1}`, with their
/// derivatives in `(phi, sigma2, beta2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub mean: f64,
    pub var: f64,
    pub d_mean: [f64; 3],
    pub d_var: [f64; 3],
}

impl KalmanState {
    /// `m_0 = 0`, `P_0 = sigma2 / (1 - phi^2)` and its parameter derivatives.
    pub fn stationary(spec: &LgssmSpec) -> Self {
        let one_m = 1.0 - spec.phi * spec.phi;
        KalmanState {
            mean: 0.0,
            var: spec.sigma2 / one_m,
            d_mean: [0.0; 3],
            d_var: [2.0 * spec.phi * spec.sigma2 / (one_m * one_m), 1.0 / one_m, 0.0],
        }
    }

    /// Same start as [`KalmanState::stationary`] but with the initial law
    /// treated as parameter-free (zero sensitivities).
    pub fn stationary_fixed_prior(spec: &LgssmSpec) -> Self {
        KalmanState { d_var: [0.0; 3], ..Self::stationary(spec) }
    }
}

/// Update with `y` and predict one step. Returns the new predictive state and
/// `log N(y; c m, c^2 P + beta2)`.
pub fn kalman_step(state: &KalmanState, y: f64, spec: &LgssmSpec) -> Result<(KalmanState, f64)> {
    let c = spec.obs_coef;
    let s = c * c * state.var + spec.beta2;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("innovation variance {s}")));
    }
    let v = y - c * state.mean;
    let loglik = -0.5 * (LN_2PI + s.ln() + v * v / s);
    let k = c * state.var / s;
    let mean_f = state.mean + k * v;
    let var_f = state.var - k * c * state.var;
    let next = KalmanState {
        mean: spec.phi * mean_f,
        var: spec.phi * spec.phi * var_f + spec.sigma2,
        d_mean: state.d_mean,
        d_var: state.d_var,
    };
    Ok((next, loglik))
}

/// Output of [`kalman_score_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStep {
    pub state: KalmanState,
    pub loglik: f64,
    /// Gradient of `log p(y_t | y_{0:t-1})` in `(phi, sigma2, beta2)`.
    pub score: [f64; 3],
}

/// Kalman step differentiated with respect to `(phi, sigma2, beta2)`.
pub fn kalman_score_step(state: &KalmanState, y: f64, spec: &LgssmSpec) -> Result<ScoreStep> {
    let c = spec.obs_coef;
    let (m, p) = (state.mean, state.var);
    let s = c * c * p + spec.beta2;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("innovation variance {s}")));
    }
    let v = y - c * m;
    let loglik = -0.5 * (LN_2PI + s.ln() + v * v / s);
    let k = c * p / s;
    let mean_f = m + k * v;
    let var_f = p - c * c * p * p / s;

    // d beta2 / d theta = e_3
    let d_beta2 = [0.0, 0.0, 1.0];
    let d_sigma2 = [0.0, 1.0, 0.0];
    let d_phi = [1.0, 0.0, 0.0];

    let mut score = [0.0; 3];
    let mut d_mean = [0.0; 3];
    let mut d_var = [0.0; 3];
    for a in 0..3 {
        let dm = state.d_mean[a];
        let dp = state.d_var[a];
        let ds = c * c * dp + d_beta2[a];
        let dv = -c * dm;
        score[a] = -0.5 * (ds / s - v * v * ds / (s * s) + 2.0 * v * dv / s);

        let dk = c * dp / s - c * p * ds / (s * s);
        let dmean_f = dm + dk * v + k * dv;
        let dvar_f = dp - c * c * (2.0 * p * dp / s - p * p * ds / (s * s));

        d_mean[a] = d_phi[a] * mean_f + spec.phi * dmean_f;
        d_var[a] = 2.0 * spec.phi * d_phi[a] * var_f + spec.phi * spec.phi * dvar_f + d_sigma2[a];
    }
    let next = KalmanState { mean: spec.phi * mean_f, var: spec.phi * spec.phi * var_f + spec.sigma2, d_mean, d_var };
    Ok(ScoreStep { state: next, loglik, score })
}

/// Total log-likelihood of `observations` from the stationary start.
pub fn log_likelihood(spec: &LgssmSpec, observations: &[f64]) -> Result<f64> {
    let mut state = KalmanState::stationary(spec);
    let mut total = 0.0;
    for &y in observations {
        let (next, ll) = kalman_step(&state, y, spec)?;
        state = next;
        total += ll;
    }
    Ok(total)
}

/// Per-observation scores `grad log p(y_t | y_{0:t-1})` for `t = 0..T`.
pub fn score_increments(spec: &LgssmSpec, observations: &[f64], initial: KalmanState) -> Result<Vec<[f64; 3]>> {
    let mut state = initial;
    observations
        .iter()
        .map(|&y| {
            let step = kalman_score_step(&state, y, spec)?;
            state = step.state;
            Ok(step.score)
        })
        .collect()
}

/// Gradient of the total log-likelihood via sensitivities.
pub fn total_score(spec: &LgssmSpec, observations: &[f64]) -> Result<[f64; 3]> {
    let mut total = [0.0; 3];
    for s in score_increments(spec, observations, KalmanState::stationary(spec))? {
        total.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    Ok(total)
}

/// Central finite differences of [`log_likelihood`] with step `h`.
pub fn fd_score(spec: &LgssmSpec, observations: &[f64], h: f64) -> Result<[f64; 3]> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be > 0, got {h}")));
    }
    let th = spec.theta();
    let mut out = [0.0; 3];
    for a in 0..3 {
        let mut plus = th;
        let mut minus = th;
        plus[a] += h;
        minus[a] -= h;
        let lp = log_likelihood(&spec.with_theta(plus)?, observations)?;
        let lm = log_likelihood(&spec.with_theta(minus)?, observations)?;
        out[a] = (lp - lm) / (2.0 * h);
    }
    Ok(out)
}

/// Simulates `steps + 1` states and observations from the linear-Gaussian model.
pub fn simulate(spec: &LgssmSpec, steps: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let streams = Streams::new(seed);
    let mut sn = streams.stream(0, 0, Purpose::SimulateState);
    let mut on = streams.stream(0, 0, Purpose::SimulateObservation);
    let (sigma, beta) = (spec.sigma2.sqrt(), spec.beta2.sqrt());
    let z: f64 = sn.sample(StandardNormal);
    let mut x = (spec.sigma2 / (1.0 - spec.phi * spec.phi)).sqrt() * z;
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        if t > 0 {
            let v: f64 = sn.sample(StandardNormal);
            x = spec.phi * x + sigma * v;
        }
        let u: f64 = on.sample(StandardNormal);
        xs.push(x);
        ys.push(spec.obs_coef * x + beta * u);
    }
    Ok((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uninformative_observation() {
        let spec = LgssmSpec::new(0.7, 0.3, 0.0, 2.0).unwrap();
        let st = KalmanState::stationary(&spec);
        let (a, ll_a) = kalman_step(&st, 1.3, &spec).unwrap();
        let (b, _) = kalman_step(&st, -4.0, &spec).unwrap();
        assert_eq!(a, b);
        let direct = -0.5 * (LN_2PI + 2f64.ln() + 1.3 * 1.3 / 2.0);
        assert!((ll_a - direct).abs() < 1e-14);

        let step = kalman_score_step(&st, 1.3, &spec).unwrap();
        let want = -1.0 / (2.0 * 2.0) + 1.3 * 1.3 / (2.0 * 4.0);
        assert!((step.score[2] - want).abs() < 1e-14);
    }

    #[test]
    fn memoryless_state_has_constant_variance() {
        let spec = LgssmSpec::new(0.0, 1.0, 1.0, 0.5).unwrap();
        let mut st = KalmanState::stationary(&spec);
        for y in [0.3, -1.2, 2.2, 0.0] {
            assert!((st.var - 1.0).abs() < 1e-15);
            st = kalman_step(&st, y, &spec).unwrap().0;
        }
    }

    #[test]
    fn fd_rejects_zero_step() {
        let spec = LgssmSpec::new(0.5, 0.3, 1.0, 1.0).unwrap();
        assert!(fd_score(&spec, &[0.1, 0.2], 0.0).is_err());
    }

    #[test]
    fn variance_scores_are_even_in_data() {
        let spec = LgssmSpec::new(0.5, 0.3, 1.0, 1.0).unwrap();
        let y = [0.3, -0.7, 1.1, 0.2];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = fd_score(&spec, &y, 1e-5).unwrap();
        let b = fd_score(&spec, &neg, 1e-5).unwrap();
        assert_eq!(a[1], b[1]);
        assert_eq!(a[2], b[2]);
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(LgssmSpec::new(1.0, 0.1, 1.0, 1.0).is_err());
        assert!(LgssmSpec::new(0.5, 0.0, 1.0, 1.0).is_err());
        assert!(LgssmSpec::new(0.5, 0.1, 1.0, -1.0).is_err());
    }
}
