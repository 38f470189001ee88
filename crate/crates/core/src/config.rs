//! Experiment configuration (TOML) with sections `model`, `algorithm`,
//! `schedule`, `experiment` and an optional `benchmark`.
//!
//! Parsing is total: malformed files, unknown keys and out-of-range values all
//! produce [`Error::Config`] naming the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter::Resampling;
use crate::model::{AnyModel, InitialTerm, ParameterVector, StateSpaceModel, DEFAULT_PARAM_FLOOR};
use crate::rml::{Algorithm, RmlOptions, StepSchedule, DEFAULT_DEGENERACY_THRESHOLD};
use crate::sampling::{DegeneratePolicy, DEFAULT_REJECTION_CAP};
use crate::smoother::SmootherOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub id: String,
    /// Generating parameter for `simulate`.
    pub theta_star: Vec<f64>,
    /// Observation coefficient of the linear-Gaussian model.
    pub obs_coef: f64,
    pub param_floor: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            id: "sv".into(),
            theta_star: vec![0.8, 0.1, 1.0],
            obs_coef: 1.0,
            param_floor: DEFAULT_PARAM_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    pub kind: Algorithm,
    pub particles: usize,
    pub backward_draws: usize,
    pub rejection_cap: usize,
    pub resampling: Resampling,
    pub paper_fidelity: bool,
    pub degeneracy_threshold: f64,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        AlgorithmSection {
            kind: Algorithm::Paris,
            particles: 1400,
            backward_draws: 2,
            rejection_cap: DEFAULT_REJECTION_CAP,
            resampling: Resampling::Multinomial,
            paper_fidelity: false,
            degeneracy_threshold: DEFAULT_DEGENERACY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Observation CSV written by `simulate` and read by `run`.
    pub data: String,
    /// Number of simulated transitions (`steps + 1` observations).
    pub steps: usize,
    /// Use at most this many observations in `run`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_observations: Option<usize>,
    pub seed: u64,
    pub replicates: usize,
    /// Explicit starting parameter; overrides the randomized box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    pub theta0_lower: Vec<f64>,
    pub theta0_upper: Vec<f64>,
    pub out: String,
    pub diagnostics: bool,
    /// Concurrent replicate jobs; 0 picks the number of CPUs.
    pub jobs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            data: "data.csv".into(),
            steps: 500_000,
            max_observations: None,
            seed: 1,
            replicates: 12,
            theta0: None,
            theta0_lower: vec![0.1, 0.05, 0.3],
            theta0_upper: vec![0.95, 1.0, 3.0],
            out: "out".into(),
            diagnostics: false,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub grid: Vec<usize>,
    pub backward_draws: usize,
    /// Minimum wall time per timing sample; repetitions grow until reached.
    pub min_sample_ms: f64,
    pub samples: usize,
    /// Steps of the stability probe; 0 disables it.
    pub stability_steps: usize,
    pub stability_replicates: usize,
    pub stability_particles: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            grid: vec![1000, 2000, 4000, 8000],
            backward_draws: 2,
            min_sample_ms: 20.0,
            samples: 5,
            stability_steps: 0,
            stability_replicates: 20,
            stability_particles: 200,
        }
    }
}

fn check_theta(path: &str, v: &[f64], model: &AnyModel) -> Result<ParameterVector> {
    if v.len() != model.dim() {
        return Err(Error::config(path, format!("expected {} components, got {}", model.dim(), v.len())));
    }
    let p = ParameterVector::new(v.to_vec()).map_err(|e| Error::config(path, e.to_string()))?;
    model.validate(&p).map_err(|e| Error::config(path, e.to_string()))?;
    Ok(p)
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.param_floor > 0.0 && m.param_floor < 0.5) {
            return Err(Error::config("model.param_floor", "must lie in (0, 0.5)"));
        }
        if !m.obs_coef.is_finite() {
            return Err(Error::config("model.obs_coef", "must be finite"));
        }
        let model = AnyModel::from_id(&m.id, m.param_floor, m.obs_coef)
            .map_err(|e| Error::config("model.id", e.to_string()))?;
        check_theta("model.theta_star", &m.theta_star, &model)?;

        let a = &self.algorithm;
        if a.particles == 0 {
            return Err(Error::config("algorithm.particles", "must be >= 1"));
        }
        if a.backward_draws == 0 {
            return Err(Error::config("algorithm.backward_draws", "must be >= 1"));
        }
        if !(a.degeneracy_threshold >= 0.0 && a.degeneracy_threshold.is_finite()) {
            return Err(Error::config("algorithm.degeneracy_threshold", "must be finite and >= 0"));
        }
        if !(self.schedule.gamma0.is_finite() && self.schedule.gamma0 >= 0.0) {
            return Err(Error::config("schedule.gamma0", "must be finite and >= 0"));
        }
        if !(self.schedule.alpha > 0.5 && self.schedule.alpha <= 1.0) {
            return Err(Error::config("schedule.alpha", "must lie in (0.5, 1]"));
        }

        let e = &self.experiment;
        if e.replicates == 0 {
            return Err(Error::config("experiment.replicates", "must be >= 1"));
        }
        if e.data.is_empty() {
            return Err(Error::config("experiment.data", "must not be empty"));
        }
        if e.out.is_empty() {
            return Err(Error::config("experiment.out", "must not be empty"));
        }
        if let Some(n) = e.max_observations {
            if n < 2 {
                return Err(Error::config("experiment.max_observations", "must be >= 2"));
            }
        }
        if let Some(th) = &e.theta0 {
            let p = check_theta("experiment.theta0", th, &model)?;
            if !model.constraints().contains(&p) {
                return Err(Error::config("experiment.theta0", "lies outside the constraint set"));
            }
        }
        for (name, v) in [("experiment.theta0_lower", &e.theta0_lower), ("experiment.theta0_upper", &e.theta0_upper)] {
            let p = check_theta(name, v, &model)?;
            if !model.constraints().contains(&p) {
                return Err(Error::config(name, "lies outside the constraint set"));
            }
        }
        if e.theta0_lower.iter().zip(&e.theta0_upper).any(|(lo, hi)| lo > hi) {
            return Err(Error::config("experiment.theta0_upper", "must be >= theta0_lower componentwise"));
        }

        if let Some(b) = &self.benchmark {
            if b.grid.len() < 3 {
                return Err(Error::config("benchmark.grid", "needs at least 3 particle counts"));
            }
            if b.grid.contains(&0) {
                return Err(Error::config("benchmark.grid", "particle counts must be >= 1"));
            }
            if b.backward_draws == 0 {
                return Err(Error::config("benchmark.backward_draws", "must be >= 1"));
            }
            if b.samples == 0 {
                return Err(Error::config("benchmark.samples", "must be >= 1"));
            }
            if !(b.min_sample_ms > 0.0 && b.min_sample_ms.is_finite()) {
                return Err(Error::config("benchmark.min_sample_ms", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<AnyModel> {
        AnyModel::from_id(&self.model.id, self.model.param_floor, self.model.obs_coef)
    }

    pub fn theta_star(&self) -> Result<ParameterVector> {
        ParameterVector::new(self.model.theta_star.clone())
    }

    pub fn rml_options(&self) -> RmlOptions {
        let a = &self.algorithm;
        let opts = RmlOptions {
            algorithm: a.kind,
            particles: a.particles,
            smoother: SmootherOptions {
                n_tilde: a.backward_draws,
                rejection_cap: a.rejection_cap,
                on_degenerate: DegeneratePolicy::FilterWeights,
                initial_term: InitialTerm::WithTransition,
            },
            schedule: self.schedule,
            resampling: a.resampling,
            guard: true,
            degeneracy_threshold: a.degeneracy_threshold,
        };
        if a.paper_fidelity {
            opts.paper_fidelity()
        } else {
            opts
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes to JSON");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}
