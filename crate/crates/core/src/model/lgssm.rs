//! Linear-Gaussian model with the same `(phi, sigma2, beta2)` parameterization
//! as the stochastic volatility model:
//!
//! ```text
//! X_{t+1} = phi X_t + sigma V_{t+1}
//! Y_t     = c X_t + beta U_t
//! ```
//!
//! The observation coefficient `c` is fixed (not estimated).

use rand::Rng;
use rand_distr::StandardNormal;

use super::sv::stationary_variance;
use super::{
    ar_gaussian_bound, normal_ln_pdf, normal_pdf, validate_ar_variance, ConstraintSet, ParameterVector, StateSpaceModel,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LgssmModel {
    obs_coef: f64,
    constraints: ConstraintSet,
}

impl LgssmModel {
    pub fn new(obs_coef: f64) -> Self {
        Self::with_floor(obs_coef, super::DEFAULT_PARAM_FLOOR)
    }

    pub fn with_floor(obs_coef: f64, floor: f64) -> Self {
        LgssmModel { obs_coef, constraints: ConstraintSet::ar_variance(floor) }
    }

    pub fn obs_coef(&self) -> f64 {
        self.obs_coef
    }
}

impl StateSpaceModel for LgssmModel {
    fn id(&self) -> &'static str {
        "lgssm"
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
        normal_pdf(y, self.obs_coef * x, theta[2])
    }

    fn grad_log_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]) {
        let beta2 = theta[2];
        let r = y - self.obs_coef * x;
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = -0.5 / beta2 + r * r / (2.0 * beta2 * beta2);
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
        normal_ln_pdf(y, self.obs_coef * x, theta[2])
    }
}
