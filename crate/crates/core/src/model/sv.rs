//! Stochastic volatility model:
//!
//! ```text
//! X_{t+1} = phi X_t + sigma V_{t+1}
//! Y_t     = beta exp(X_t / 2) U_t
//! ```
//!
//! with `theta = (phi, sigma2, beta2)` and independent standard Gaussian
//! noise `V`, `U`. The initial law is the stationary `N(0, sigma2 / (1 - phi^2))`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    ar_gaussian_bound, normal_ln_pdf, normal_pdf, validate_ar_variance, ConstraintSet, ParameterVector, StateSpaceModel,
};
use crate::error::Result;
use crate::rng::{Purpose, Streams};

#[derive(Debug, Clone, PartialEq)]
pub struct SvModel {
    constraints: ConstraintSet,
}

impl Default for SvModel {
    fn default() -> Self {
        Self::with_floor(super::DEFAULT_PARAM_FLOOR)
    }
}

impl SvModel {
    pub fn with_floor(floor: f64) -> Self {
        SvModel { constraints: ConstraintSet::ar_variance(floor) }
    }
}

/// Stationary variance of the AR(1) state.
pub(crate) fn stationary_variance(theta: &ParameterVector) -> f64 {
    let phi = theta[0];
    theta[1] / (1.0 - phi * phi)
}

impl StateSpaceModel for SvModel {
    fn id(&self) -> &'static str {
        "sv"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["phi", "sigma2", "beta2"]
    }

    fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    fn validate(&self, theta: &ParameterVector) -> Result<()> {
        validate_ar_variance(theta, true)
    }

    fn sample_initial<R: Rng + ?Sized>(&self, theta: &ParameterVector, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        stationary_variance(theta).sqrt() * z
    }

    fn sample_transition<R: Rng + ?Sized>(&self, theta: &ParameterVector, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        theta[0] * x + theta[1].sqrt() * z
    }

    #[inline]
    fn transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64 {
        normal_pdf(x_next, theta[0] * x, theta[1])
    }

    fn transition_sup(&self, theta: &ParameterVector) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * theta[1]).sqrt()
    }

    #[inline]
    fn transition_bound(&self, theta: &ParameterVector, lo: f64, hi: f64, x_next: f64) -> Option<f64> {
        Some(ar_gaussian_bound(theta[0], theta[1], lo, hi, x_next))
    }

    #[inline]
    fn emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64 {
        normal_pdf(y, 0.0, theta[2] * x.exp())
    }

    fn grad_log_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]) {
        let beta2 = theta[2];
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = -0.5 / beta2 + y * y / (2.0 * beta2 * beta2 * x.exp());
    }

    fn grad_log_transition(&self, theta: &ParameterVector, x: f64, x_next: f64, out: &mut [f64]) {
        let (phi, sigma2) = (theta[0], theta[1]);
        let r = x_next - phi * x;
        out[0] = x * r / sigma2;
        out[1] = -0.5 / sigma2 + r * r / (2.0 * sigma2 * sigma2);
        out[2] = 0.0;
    }

    fn log_transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64 {
        normal_ln_pdf(x_next, theta[0] * x, theta[1])
    }

    fn log_emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64 {
        normal_ln_pdf(y, 0.0, theta[2] * x.exp())
    }
}

/// Simulates `steps + 1` states and observations from the stochastic
/// volatility model. State and observation noise come from separate streams.
pub fn sv_simulate(theta_star: &ParameterVector, steps: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    validate_ar_variance(theta_star, true)?;
    let (phi, sigma2, beta2) = (theta_star[0], theta_star[1], theta_star[2]);
    let streams = Streams::new(seed);
    let mut state_noise = streams.stream(0, 0, Purpose::SimulateState);
    let mut obs_noise = streams.stream(0, 0, Purpose::SimulateObservation);
    let (sigma, beta) = (sigma2.sqrt(), beta2.sqrt());

    let mut states = Vec::with_capacity(steps + 1);
    let mut observations = Vec::with_capacity(steps + 1);
    let z: f64 = state_noise.sample(StandardNormal);
    let mut x = stationary_variance(theta_star).sqrt() * z;
    for t in 0..=steps {
        if t > 0 {
            let v: f64 = state_noise.sample(StandardNormal);
            x = phi * x + sigma * v;
        }
        let u: f64 = obs_noise.sample(StandardNormal);
        states.push(x);
        observations.push(beta * (x / 2.0).exp() * u);
    }
    Ok((states, observations))
}
