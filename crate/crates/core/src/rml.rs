//! Recursive maximum likelihood driver.
//!
//! Each observation pair `(y_t, y_{t+1})` advances the particle filter and the
//! tangent statistics by one step, assembles the score estimate
//! `zeta_{t+1} = (T1 + T2) / T3` and applies the projected Robbins-Monro update
//! `theta_{t+1} = proj(theta_t + gamma_{t+1} zeta_{t+1})`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{init_cloud, propagate, weight_cloud, ParticleCloud, Resampling};
use crate::model::{InitialTerm, ParameterVector, StateSpaceModel};
use crate::rng::Streams;
use crate::sampling::{DegeneratePolicy, WeightVector};
use crate::smoother::{paris_update, quadratic_update, tau_mean, SmootherOptions, SmootherReport, TauStats};

/// T3 below this value counts as a degenerate score step.
pub const DEFAULT_DEGENERACY_THRESHOLD: f64 = 1e-300;

/// `gamma_t = gamma0 * t^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub alpha: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { gamma0: 1.0, alpha: 0.6 }
    }
}

impl StepSchedule {
    pub fn new(gamma0: f64, alpha: f64) -> Result<Self> {
        let s = StepSchedule { gamma0, alpha };
        s.validate()?;
        Ok(s)
    }

    /// Zero step sizes: the parameter stays at its initial value.
    pub fn frozen() -> Self {
        StepSchedule { gamma0: 0.0, alpha: 0.6 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0.is_finite() && self.gamma0 >= 0.0) {
            return Err(Error::InvalidInput(format!("gamma0 must be finite and >= 0, got {}", self.gamma0)));
        }
        if !(self.alpha > 0.5 && self.alpha <= 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0.5, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Step size for update number `t >= 1`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma0 * (t as f64).powf(-self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Paris,
    Quadratic,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paris" => Ok(Algorithm::Paris),
            "quadratic" => Ok(Algorithm::Quadratic),
            other => Err(Error::InvalidInput(format!("unknown algorithm `{other}` (expected `paris` or `quadratic`)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Paris => "paris",
            Algorithm::Quadratic => "quadratic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmlOptions {
    pub algorithm: Algorithm,
    pub particles: usize,
    pub smoother: SmootherOptions,
    pub schedule: StepSchedule,
    pub resampling: Resampling,
    /// Skip the update (and flag the step) on weight collapse, degenerate
    /// backward kernels or `T3 < degeneracy_threshold`. Without the guard,
    /// degeneracy is a hard error.
    pub guard: bool,
    pub degeneracy_threshold: f64,
}

impl Default for RmlOptions {
    fn default() -> Self {
        RmlOptions {
            algorithm: Algorithm::Paris,
            particles: 100,
            smoother: SmootherOptions { on_degenerate: DegeneratePolicy::FilterWeights, ..SmootherOptions::default() },
            schedule: StepSchedule::default(),
            resampling: Resampling::Multinomial,
            guard: true,
            degeneracy_threshold: DEFAULT_DEGENERACY_THRESHOLD,
        }
    }
}

impl RmlOptions {
    /// Literal reading of the published recursion: no degeneracy guard and
    /// no transition term in the first additive score term.
    pub fn paper_fidelity(mut self) -> Self {
        self.guard = false;
        self.smoother.on_degenerate = DegeneratePolicy::Error;
        self.smoother.initial_term = InitialTerm::EmissionOnly;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidInput("particles must be >= 1".into()));
        }
        if self.smoother.n_tilde == 0 {
            return Err(Error::InvalidInput("n_tilde must be >= 1".into()));
        }
        self.schedule.validate()
    }
}

/// The three score terms and the resulting score estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreIncrement {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub t3: f64,
    pub zeta: Vec<f64>,
}

impl ScoreIncrement {
    pub fn is_degenerate(&self, threshold: f64) -> bool {
        !(self.t3 >= threshold) || self.zeta.iter().any(|z| !z.is_finite())
    }

    /// `max_k |zeta_k T3 - (T1_k + T2_k)| / max(|T1_k + T2_k|, tiny)`.
    pub fn identity_residual(&self) -> f64 {
        self.zeta
            .iter()
            .zip(self.t1.iter().zip(&self.t2))
            .map(|(z, (a, b))| {
                let rhs = a + b;
                (z * self.t3 - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

/// `T1 = mean grad g`, `T2 = mean (tau - mean tau) g`, `T3 = mean g`, all at `y_next`.
pub fn score_terms<M: StateSpaceModel + ?Sized>(
    next_cloud: &ParticleCloud,
    tau_next: &TauStats,
    y_next: f64,
    theta: &ParameterVector,
    model: &M,
) -> Result<ScoreIncrement> {
    if tau_next.len() != next_cloud.len() || tau_next.t() != next_cloud.t() {
        return Err(Error::InvalidInput("tau statistics not aligned with the particle cloud".into()));
    }
    let d = tau_next.dim();
    let n = next_cloud.len() as f64;
    let tau_bar = tau_mean(tau_next);
    let mut t1 = vec![0.0; d];
    let mut t2 = vec![0.0; d];
    let mut t3 = 0.0;
    let mut grad = vec![0.0; d];
    for (l, &x) in next_cloud.positions().iter().enumerate() {
        let g = model.emission_density(theta, x, y_next);
        model.grad_emission(theta, x, y_next, &mut grad);
        let row = tau_next.row(l);
        for k in 0..d {
            t1[k] += grad[k];
            t2[k] += (row[k] - tau_bar[k]) * g;
        }
        t3 += g;
    }
    t1.iter_mut().chain(t2.iter_mut()).for_each(|v| *v /= n);
    t3 /= n;
    let zeta = t1.iter().zip(&t2).map(|(a, b)| (a + b) / t3).collect();
    Ok(ScoreIncrement { t1, t2, t3, zeta })
}

/// Filter, tangent statistics and parameter at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmlState {
    pub cloud: ParticleCloud,
    pub tau: TauStats,
    pub theta: ParameterVector,
    pub t: usize,
}

impl RmlState {
    pub fn init<M: StateSpaceModel + ?Sized>(
        model: &M,
        theta0: ParameterVector,
        particles: usize,
        streams: &Streams,
    ) -> Result<Self> {
        model.validate(&theta0)?;
        if !model.constraints().contains(&theta0) {
            return Err(Error::InvalidInput(format!("initial parameter {theta0} lies outside the constraint set")));
        }
        let cloud = init_cloud(model, &theta0, particles, streams)?;
        Ok(RmlState { cloud, tau: TauStats::zeros(particles, model.dim()), theta: theta0, t: 0 })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub weight_collapse: bool,
    pub backward_degenerate: bool,
    pub score_degenerate: bool,
    /// The tangent statistics were reset to zero because the additive term
    /// could not be evaluated.
    #[serde(default)]
    pub tangent_reset: bool,
}

impl StepFlags {
    /// The parameter update was skipped.
    pub fn skipped(&self) -> bool {
        self.weight_collapse || self.backward_degenerate || self.score_degenerate || self.tangent_reset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub ess: f64,
    pub weight_total: f64,
    pub tau_bar: Vec<f64>,
    pub proposals_per_draw: f64,
    pub fallbacks: u64,
}

/// Output of one RML step: the new parameter `theta_t` and the score that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub theta: Vec<f64>,
    pub score: ScoreIncrement,
    pub gamma: f64,
    pub flags: StepFlags,
    pub diagnostics: StepDiagnostics,
}

/// One RML step: weight with `y_t`, propagate, update the tangent statistics,
/// score `y_next`, and update the parameter. Randomness comes from streams keyed by `t`.
pub fn rml_step<M: StateSpaceModel + ?Sized>(
    state: &RmlState,
    y_t: f64,
    y_next: f64,
    model: &M,
    opts: &RmlOptions,
    streams: &Streams,
) -> Result<(RmlState, StepRecord)> {
    let t = state.t;
    if state.cloud.t() != t || state.tau.t() != t {
        return Err(Error::InvalidInput(format!(
            "inconsistent state: t = {t}, cloud.t = {}, tau.t = {}",
            state.cloud.t(),
            state.tau.t()
        )));
    }
    let theta = &state.theta;
    let mut flags = StepFlags::default();

    let weighted = match weight_cloud(&state.cloud, y_t, theta, model) {
        Ok(c) => c,
        Err(Error::WeightCollapse { .. }) if opts.guard => {
            flags.weight_collapse = true;
            let n = state.cloud.len();
            ParticleCloud::with_weights(state.cloud.positions().to_vec(), WeightVector::uniform(n), t)?
        }
        Err(e) => return Err(e),
    };
    let (ess, weight_total) = (weighted.weights().effective_sample_size(), weighted.weights().total());

    let (next_cloud, _ancestors) = propagate(&weighted, theta, model, streams, opts.resampling)?;

    let updated = match opts.algorithm {
        Algorithm::Paris => {
            paris_update(&state.tau, &weighted, &next_cloud, y_t, theta, model, &opts.smoother, streams)
        }
        Algorithm::Quadratic => quadratic_update(&state.tau, &weighted, &next_cloud, y_t, theta, model, &opts.smoother),
    };
    // only the centred statistics enter the score, so a reset loses the
    // accumulated smoothing information but keeps the recursion well defined
    let (tau_next, report) = match updated {
        Ok(v) => v,
        Err(Error::NonFinite { .. }) if opts.guard => {
            flags.tangent_reset = true;
            (TauStats::zeros(next_cloud.len(), model.dim()).at(t + 1), SmootherReport::default())
        }
        Err(e) => return Err(e),
    };
    flags.backward_degenerate = report.degenerate_rows > 0;

    let score = score_terms(&next_cloud, &tau_next, y_next, theta, model)?;
    if score.is_degenerate(opts.degeneracy_threshold) && opts.guard {
        flags.score_degenerate = true;
    }

    let gamma = opts.schedule.gamma(t + 1);
    let theta_next = if flags.skipped() {
        theta.clone()
    } else {
        let raw: Vec<f64> = theta.as_slice().iter().zip(&score.zeta).map(|(th, z)| th + gamma * z).collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate {
                t: t + 1,
                theta: theta.as_slice().to_vec(),
                zeta: score.zeta.clone(),
            });
        }
        model.constraints().project(&ParameterVector::new(raw)?)
    };

    let diagnostics = StepDiagnostics {
        ess,
        weight_total,
        tau_bar: tau_mean(&tau_next),
        proposals_per_draw: report.draws.proposals_per_draw(),
        fallbacks: report.draws.fallbacks,
    };
    let record = StepRecord { t: t + 1, theta: theta_next.as_slice().to_vec(), score, gamma, flags, diagnostics };
    let state = RmlState { cloud: next_cloud, tau: tau_next, theta: theta_next, t: t + 1 };
    Ok((state, record))
}

/// Push-based online estimator: feed observations one at a time.
#[derive(Debug, Clone)]
pub struct OnlineRml<M> {
    model: M,
    opts: RmlOptions,
    streams: Streams,
    state: RmlState,
    pending: Option<f64>,
}

impl<M: StateSpaceModel> OnlineRml<M> {
    pub fn new(model: M, opts: RmlOptions, theta0: ParameterVector, seed: u64) -> Result<Self> {
        opts.validate()?;
        let streams = Streams::new(seed);
        let state = RmlState::init(&model, theta0, opts.particles, &streams)?;
        Ok(OnlineRml { model, opts, streams, state, pending: None })
    }

    /// Consumes the next observation. The first call only stores `y_0`; every
    /// later call performs one parameter update and returns its record.
    pub fn push(&mut self, y: f64) -> Result<Option<StepRecord>> {
        if !y.is_finite() {
            return Err(Error::Data(format!("non-finite observation {y} at t = {}", self.state.t + 1)));
        }
        let Some(y_t) = self.pending.replace(y) else {
            return Ok(None);
        };
        let (state, record) = rml_step(&self.state, y_t, y, &self.model, &self.opts, &self.streams)?;
        self.state = state;
        Ok(Some(record))
    }

    pub fn theta(&self) -> &ParameterVector {
        &self.state.theta
    }

    pub fn state(&self) -> &RmlState {
        &self.state
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn options(&self) -> &RmlOptions {
        &self.opts
    }
}

/// Summary of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub updates: usize,
    pub skipped: usize,
    pub final_theta: Vec<f64>,
}

/// Folds [`rml_step`] over `observations`, handing each record to `sink`.
/// Memory use does not grow with the number of observations.
pub fn run_online<M, I, F>(
    observations: I,
    model: M,
    opts: RmlOptions,
    theta0: ParameterVector,
    seed: u64,
    mut sink: F,
) -> Result<RunSummary>
where
    M: StateSpaceModel,
    I: IntoIterator<Item = f64>,
    F: FnMut(&StepRecord) -> Result<()>,
{
    let mut rml = OnlineRml::new(model, opts, theta0, seed)?;
    let (mut updates, mut skipped) = (0, 0);
    for y in observations {
        if let Some(rec) = rml.push(y)? {
            updates += 1;
            skipped += rec.flags.skipped() as usize;
            sink(&rec)?;
        }
    }
    if updates == 0 {
        return Err(Error::InvalidInput("at least two observations are required".into()));
    }
    Ok(RunSummary { updates, skipped, final_theta: rml.theta().as_slice().to_vec() })
}

/// Collected trajectory for in-memory use.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub theta0: Vec<f64>,
    pub records: Vec<StepRecord>,
}

pub fn run_collect<M: StateSpaceModel>(
    observations: &[f64],
    model: M,
    opts: RmlOptions,
    theta0: ParameterVector,
    seed: u64,
) -> Result<Trajectory> {
    let mut traj = Trajectory { theta0: theta0.as_slice().to_vec(), records: Vec::with_capacity(observations.len()) };
    run_online(observations.iter().copied(), model, opts, theta0, seed, |r| {
        traj.records.push(r.clone());
        Ok(())
    })?;
    Ok(traj)
}
