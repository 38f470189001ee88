//! State-space model abstraction.
//!
//! A model supplies the initial sampler, the transition kernel (density,
//! sampler and a uniform upper bound on the density), the emission density,
//! and the parameter gradients of the log-densities needed by the additive
//! score functional. All methods are pure functions of their arguments.

mod lgssm;
mod sv;

pub use lgssm::LgssmModel;
pub use sv::{sv_simulate, SvModel};

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor for variance components and distance of `|phi|` from one.
pub const DEFAULT_PARAM_FLOOR: f64 = 1e-4;

/// A point in parameter space. All components are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("parameter vector is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("parameter component {i} is not finite ({})", values[i])));
        }
        Ok(ParameterVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParameterVector::new(v)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Vec<f64> {
        p.0
    }
}

impl fmt::Display for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Componentwise box constraints used to project Robbins-Monro iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl ConstraintSet {
    /// Bounds for `(phi, sigma2, beta2)`: `|phi| <= 1 - floor`, variances `>= floor`.
    pub fn ar_variance(floor: f64) -> Self {
        ConstraintSet {
            lower: vec![Some(-1.0 + floor), Some(floor), Some(floor)],
            upper: vec![Some(1.0 - floor), None, None],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &ParameterVector) -> bool {
        theta.len() == self.dim()
            && theta
                .as_slice()
                .iter()
                .enumerate()
                .all(|(k, &v)| self.lower[k].is_none_or(|lo| v >= lo) && self.upper[k].is_none_or(|hi| v <= hi))
    }

    /// Componentwise clamp onto the box. Idempotent.
    pub fn project(&self, theta: &ParameterVector) -> ParameterVector {
        let values = theta
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let v = self.lower[k].map_or(v, |lo| v.max(lo));
                self.upper[k].map_or(v, |hi| v.min(hi))
            })
            .collect();
        ParameterVector(values)
    }
}

/// Clamp `theta` onto `constraints`.
pub fn project(theta: &ParameterVector, constraints: &ConstraintSet) -> ParameterVector {
    constraints.project(theta)
}

/// Convention for the additive score term at `s = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialTerm {
    /// `grad log g(x0, y0) + grad log q(x0, x1)`: the exact score of the joint law.
    #[default]
    WithTransition,
    /// `grad log g(x0, y0)` only.
    EmissionOnly,
}

pub trait StateSpaceModel: Send + Sync {
    /// Short identifier, e.g. `"sv"`.
    fn id(&self) -> &'static str;

    /// Parameter names, one per dimension.
    fn param_names(&self) -> &'static [&'static str];

    fn dim(&self) -> usize {
        self.param_names().len()
    }

    fn constraints(&self) -> &ConstraintSet;

    /// Checks that `theta` has the right length and lies where the densities are defined.
    fn validate(&self, theta: &ParameterVector) -> Result<()>;

    /// Draw from the initial law. The initial law does not enter the score.
    fn sample_initial<R: Rng + ?Sized>(&self, theta: &ParameterVector, rng: &mut R) -> f64;

    fn sample_transition<R: Rng + ?Sized>(&self, theta: &ParameterVector, x: f64, rng: &mut R) -> f64;

    fn transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64;

    /// Upper bound on `transition_density(theta, ., .)`.
    fn transition_sup(&self, theta: &ParameterVector) -> f64;

    /// Upper bound on `transition_density(theta, x, x_next)` over `x` in
    /// `[lo, hi]`, or `None` when no bound tighter than `transition_sup` is known.
    fn transition_bound(&self, _theta: &ParameterVector, _lo: f64, _hi: f64, _x_next: f64) -> Option<f64> {
        None
    }

    fn emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64;

    fn grad_log_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]);

    fn grad_log_transition(&self, theta: &ParameterVector, x: f64, x_next: f64, out: &mut [f64]);

    /// `grad g = g * grad log g`.
    fn grad_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]) {
        self.grad_log_emission(theta, x, y, out);
        let g = self.emission_density(theta, x, y);
        out.iter_mut().for_each(|v| *v *= g);
    }

    fn log_transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64 {
        self.transition_density(theta, x, x_next).ln()
    }

    fn log_emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64 {
        self.emission_density(theta, x, y).ln()
    }
}

/// The additive score term `s_t(x_t, x_{t+1})` evaluated at observation `y_t`,
/// written into `out`.
#[allow(clippy::too_many_arguments)]
pub fn additive_term<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &ParameterVector,
    t: usize,
    x: f64,
    x_next: f64,
    y: f64,
    initial: InitialTerm,
    out: &mut [f64],
) {
    model.grad_log_emission(theta, x, y, out);
    if t > 0 || initial == InitialTerm::WithTransition {
        let mut tr = [0.0; 8];
        let tr = &mut tr[..out.len()];
        model.grad_log_transition(theta, x, x_next, tr);
        out.iter_mut().zip(tr.iter()).for_each(|(o, v)| *o += v);
    }
}

/// Runtime-selected model, dispatched by identifier.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Sv(SvModel),
    Lgssm(LgssmModel),
}

impl AnyModel {
    /// `"sv"` or `"lgssm"`; `obs_coef` only applies to the linear-Gaussian model.
    pub fn from_id(id: &str, param_floor: f64, obs_coef: f64) -> Result<Self> {
        match id {
            "sv" => Ok(AnyModel::Sv(SvModel::with_floor(param_floor))),
            "lgssm" => Ok(AnyModel::Lgssm(LgssmModel::with_floor(obs_coef, param_floor))),
            other => Err(Error::InvalidInput(format!("unknown model id `{other}` (expected `sv` or `lgssm`)"))),
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Sv($m) => $e,
            AnyModel::Lgssm($m) => $e,
        }
    };
}

impl StateSpaceModel for AnyModel {
    fn id(&self) -> &'static str {
        dispatch!(self, m => m.id())
    }
    fn param_names(&self) -> &'static [&'static str] {
        dispatch!(self, m => m.param_names())
    }
    fn constraints(&self) -> &ConstraintSet {
        dispatch!(self, m => m.constraints())
    }
    fn validate(&self, theta: &ParameterVector) -> Result<()> {
        dispatch!(self, m => m.validate(theta))
    }
    fn sample_initial<R: Rng + ?Sized>(&self, theta: &ParameterVector, rng: &mut R) -> f64 {
        dispatch!(self, m => m.sample_initial(theta, rng))
    }
    fn sample_transition<R: Rng + ?Sized>(&self, theta: &ParameterVector, x: f64, rng: &mut R) -> f64 {
        dispatch!(self, m => m.sample_transition(theta, x, rng))
    }
    #[inline]
    fn transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64 {
        dispatch!(self, m => m.transition_density(theta, x, x_next))
    }
    fn transition_sup(&self, theta: &ParameterVector) -> f64 {
        dispatch!(self, m => m.transition_sup(theta))
    }
    #[inline]
    fn transition_bound(&self, theta: &ParameterVector, lo: f64, hi: f64, x_next: f64) -> Option<f64> {
        dispatch!(self, m => m.transition_bound(theta, lo, hi, x_next))
    }
    #[inline]
    fn emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64 {
        dispatch!(self, m => m.emission_density(theta, x, y))
    }
    fn grad_log_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_log_emission(theta, x, y, out))
    }
    fn grad_log_transition(&self, theta: &ParameterVector, x: f64, x_next: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_log_transition(theta, x, x_next, out))
    }
    fn grad_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_emission(theta, x, y, out))
    }
    fn log_transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64 {
        dispatch!(self, m => m.log_transition_density(theta, x, x_next))
    }
    fn log_emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64 {
        dispatch!(self, m => m.log_emission_density(theta, x, y))
    }
}

/// Shared checks for the `(phi, sigma2, beta2)` parameterization.
pub(crate) fn validate_ar_variance(theta: &ParameterVector, require_stationary: bool) -> Result<()> {
    if theta.len() != 3 {
        return Err(Error::InvalidInput(format!("expected 3 parameters, got {}", theta.len())));
    }
    let (phi, sigma2, beta2) = (theta[0], theta[1], theta[2]);
    if require_stationary && phi.abs() >= 1.0 {
        return Err(Error::Domain(format!("|phi| must be < 1, got {phi}")));
    }
    if sigma2 <= 0.0 {
        return Err(Error::Domain(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if beta2 <= 0.0 {
        return Err(Error::Domain(format!("beta2 must be > 0, got {beta2}")));
    }
    Ok(())
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub(crate) fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    (-0.5 * r * r / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Sup of `normal_pdf(x_next, phi * x, var)` over `x` in `[lo, hi]`.
#[inline]
pub(crate) fn ar_gaussian_bound(phi: f64, var: f64, lo: f64, hi: f64, x_next: f64) -> f64 {
    let (a, b) = if phi >= 0.0 { (phi * lo, phi * hi) } else { (phi * hi, phi * lo) };
    let d = if x_next < a {
        a - x_next
    } else if x_next > b {
        x_next - b
    } else {
        0.0
    };
    normal_pdf(d, 0.0, var)
}

#[inline]
pub(crate) fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}
