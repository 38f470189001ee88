//! Test-side oracles written independently of the library code.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const LN_2PI: f64 = 1.8378770664093453;

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// SV transition score in (phi, sigma2, beta2).
pub fn sv_grad_log_q(th: &[f64], x: f64, xn: f64) -> [f64; 3] {
    let (phi, s2) = (th[0], th[1]);
    let r = xn - phi * x;
    [r * x / s2, -0.5 / s2 + r * r / (2.0 * s2 * s2), 0.0]
}

/// SV emission score: Y | x ~ N(0, beta2 e^x).
pub fn sv_grad_log_g(th: &[f64], x: f64, y: f64) -> [f64; 3] {
    let b2 = th[2];
    [0.0, 0.0, -0.5 / b2 + y * y * (-x).exp() / (2.0 * b2 * b2)]
}

pub fn sv_g(th: &[f64], x: f64, y: f64) -> f64 {
    normal_pdf(y, 0.0, th[2] * x.exp())
}

pub fn sv_q(th: &[f64], x: f64, xn: f64) -> f64 {
    normal_pdf(xn, th[0] * x, th[1])
}

pub fn tv_distance(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    0.5 * counts.iter().zip(probs).map(|(&c, &p)| (c as f64 / n as f64 - p).abs()).sum::<f64>()
}

/// Two-sample chi-square homogeneity test on count vectors, pooling bins whose
/// expected count is below 5. Returns (statistic, degrees of freedom, p-value).
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> (f64, f64, f64) {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let total = na + nb;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut pa, mut pb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        pa += x as f64;
        pb += y as f64;
        let m = pa + pb;
        if m * na.min(nb) / total >= 5.0 {
            bins.push((pa, pb));
            pa = 0.0;
            pb = 0.0;
        }
    }
    if pa + pb > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += pa;
                last.1 += pb;
            }
            None => bins.push((pa, pb)),
        }
    }
    let stat: f64 = bins
        .iter()
        .map(|&(x, y)| {
            let m = x + y;
            let (ea, eb) = (m * na / total, m * nb / total);
            (x - ea).powi(2) / ea + (y - eb).powi(2) / eb
        })
        .sum();
    let df = (bins.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    (stat, df, p)
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

use paris_rml::rml::{rml_step, RmlOptions, RmlState};
use paris_rml::{ParameterVector, StateSpaceModel, StepRecord, Streams};

/// Counts from checking the structural identities on every step of a run.
#[derive(Debug, Default, Clone)]
pub struct IdentityTally {
    pub steps: usize,
    pub identity_checked: usize,
    pub max_identity_residual: f64,
    pub non_uniform_weights: usize,
    pub outside_constraints: usize,
    pub nonzero_initial_tau: bool,
}

impl IdentityTally {
    pub fn ok(&self) -> bool {
        self.steps > 0
            && self.max_identity_residual < 1e-12
            && self.non_uniform_weights == 0
            && self.outside_constraints == 0
            && !self.nonzero_initial_tau
    }

    pub fn merge(&mut self, o: &IdentityTally) {
        self.steps += o.steps;
        self.identity_checked += o.identity_checked;
        self.max_identity_residual = self.max_identity_residual.max(o.max_identity_residual);
        self.non_uniform_weights += o.non_uniform_weights;
        self.outside_constraints += o.outside_constraints;
        self.nonzero_initial_tau |= o.nonzero_initial_tau;
    }
}

/// Drives `rml_step` over `y`, checking the structural identities after every step.
pub fn checked_run<M: StateSpaceModel>(
    model: &M,
    opts: &RmlOptions,
    y: &[f64],
    theta0: ParameterVector,
    seed: u64,
) -> (Vec<StepRecord>, IdentityTally) {
    let streams = Streams::new(seed);
    let mut state = RmlState::init(model, theta0, opts.particles, &streams).unwrap();
    let mut tally = IdentityTally {
        nonzero_initial_tau: state.tau.as_slice().iter().any(|&v| v != 0.0),
        ..IdentityTally::default()
    };
    let mut records = Vec::with_capacity(y.len().saturating_sub(1));
    for t in 0..y.len().saturating_sub(1) {
        let (next, rec) = rml_step(&state, y[t], y[t + 1], model, opts, &streams).unwrap();
        tally.steps += 1;
        if !next.cloud.weights().is_uniform() {
            tally.non_uniform_weights += 1;
        }
        if !model.constraints().contains(&next.theta) {
            tally.outside_constraints += 1;
        }
        if !rec.flags.skipped() && rec.score.zeta.iter().all(|z| z.is_finite()) {
            tally.identity_checked += 1;
            tally.max_identity_residual = tally.max_identity_residual.max(rec.score.identity_residual());
        }
        state = next;
        records.push(rec);
    }
    (records, tally)
}
