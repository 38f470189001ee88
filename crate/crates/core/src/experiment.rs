//! Simulation and replicated RML experiments with file artifacts.
//!
//! A run directory holds `config.resolved.toml`, one trajectory CSV per
//! replicate, `index.json` (everything needed to relaunch any replicate) and
//! `timings.json` (wall-clock times, kept apart so that the other artifacts
//! are byte-identical across re-runs).

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{read_observations, read_trajectory, write_data_csv, write_json, DiagnosticsWriter, TrajectoryWriter};
use crate::kalman::{self, LgssmSpec};
use crate::model::{sv_simulate, AnyModel, ParameterVector, StateSpaceModel};
use crate::rml::{run_online, Algorithm};
use crate::rng::{Purpose, Streams};

pub const INDEX_FILE: &str = "index.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub model: String,
    pub theta_star: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
    pub config_hash: String,
    pub data_sha256: String,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Simulates `experiment.steps + 1` observations at `model.theta_star` and
/// writes the data CSV plus a `.meta.json` sidecar.
pub fn cmd_simulate(cfg: &Config, data_path: &Path, with_states: bool) -> Result<DataMeta> {
    let theta = cfg.theta_star()?;
    let (seed, steps) = (cfg.experiment.seed, cfg.experiment.steps);
    let (states, obs) = match cfg.model()? {
        AnyModel::Sv(_) => sv_simulate(&theta, steps, seed)?,
        AnyModel::Lgssm(m) => kalman::simulate(&LgssmSpec::from_theta(&theta, m.obs_coef())?, steps, seed)?,
    };
    if let Some(dir) = data_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_data_csv(data_path, &obs, with_states.then_some(&states[..]))?;
    let meta = DataMeta {
        model: cfg.model.id.clone(),
        theta_star: theta.into_vec(),
        steps,
        seed,
        config_hash: cfg.hash(),
        data_sha256: file_sha256(data_path)?,
    };
    write_json(&sidecar_path(data_path), &meta)?;
    Ok(meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Theta0Policy {
    Fixed { theta: Vec<f64> },
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config_path: Option<String>,
    pub replicates: usize,
    pub seed: u64,
    pub theta0_policy: Theta0Policy,
    pub out_dir: String,
}

impl ExperimentManifest {
    pub fn from_config(cfg: &Config, config_path: Option<&Path>, out_dir: &Path) -> Self {
        let e = &cfg.experiment;
        let theta0_policy = match &e.theta0 {
            Some(t) => Theta0Policy::Fixed { theta: t.clone() },
            None => Theta0Policy::Uniform { lower: e.theta0_lower.clone(), upper: e.theta0_upper.clone() },
        };
        ExperimentManifest {
            config_path: config_path.map(|p| p.display().to_string()),
            replicates: e.replicates,
            seed: e.seed,
            theta0_policy,
            out_dir: out_dir.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicateStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEntry {
    pub replicate: usize,
    pub seed: u64,
    pub theta0: Vec<f64>,
    pub trajectory: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
    pub status: ReplicateStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_dump: Option<String>,
    pub updates: usize,
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub config_hash: String,
    pub config: Config,
    pub manifest: ExperimentManifest,
    pub data: String,
    pub data_sha256: String,
    pub observations: usize,
    pub replicates: Vec<ReplicateEntry>,
}

impl RunIndex {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn failed(&self) -> usize {
        self.replicates.iter().filter(|r| r.status == ReplicateStatus::Failed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateTiming {
    pub replicate: usize,
    pub wall_time_s: f64,
}

pub fn replicate_seed(cfg: &Config, r: usize) -> u64 {
    Streams::new(cfg.experiment.seed).child_seed(r)
}

/// Starting parameter for replicate `r`: the fixed value, or a uniform draw
/// from the configured box using stream `(seed, 0, r, InitialTheta)`.
pub fn replicate_theta0(cfg: &Config, r: usize) -> Result<ParameterVector> {
    let e = &cfg.experiment;
    if let Some(t) = &e.theta0 {
        return ParameterVector::new(t.clone());
    }
    let mut rng = Streams::new(e.seed).stream(0, r, Purpose::InitialTheta);
    let v = e.theta0_lower.iter().zip(&e.theta0_upper).map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
    ParameterVector::new(v)
}

fn trajectory_name(r: usize) -> String {
    format!("replicate_{r:03}.csv")
}

/// Runs replicate `r` on `observations`, writing its trajectory into `out_dir`.
/// Failures are captured in the returned entry.
pub fn run_replicate(
    cfg: &Config,
    r: usize,
    observations: &[f64],
    out_dir: &Path,
) -> (ReplicateEntry, ReplicateTiming) {
    let start = Instant::now();
    let seed = replicate_seed(cfg, r);
    let mut entry = ReplicateEntry {
        replicate: r,
        seed,
        theta0: Vec::new(),
        trajectory: trajectory_name(r),
        diagnostics: cfg.experiment.diagnostics.then(|| format!("replicate_{r:03}.diag.csv")),
        status: ReplicateStatus::Ok,
        error: None,
        state_dump: None,
        updates: 0,
        skipped: 0,
        final_theta: None,
    };
    let result = (|| -> Result<()> {
        let model = cfg.model()?;
        let theta0 = replicate_theta0(cfg, r)?;
        entry.theta0 = theta0.as_slice().to_vec();
        let hash = cfg.hash();
        let names = model.param_names();
        let mut traj = TrajectoryWriter::create(&out_dir.join(&entry.trajectory), names, &hash, seed)?;
        let mut diag = match &entry.diagnostics {
            Some(name) => Some(DiagnosticsWriter::create(&out_dir.join(name), names, &hash, seed)?),
            None => None,
        };
        let summary = run_online(observations.iter().copied(), model, cfg.rml_options(), theta0, seed, |rec| {
            traj.write(rec)?;
            if let Some(d) = diag.as_mut() {
                d.write(rec)?;
            }
            entry.updates += 1;
            entry.skipped += rec.flags.skipped() as usize;
            Ok(())
        })?;
        traj.finish()?;
        if let Some(d) = diag {
            d.finish()?;
        }
        entry.final_theta = Some(summary.final_theta);
        Ok(())
    })();
    if let Err(e) = result {
        entry.status = ReplicateStatus::Failed;
        entry.error = Some(e.to_string());
        let dump = format!("replicate_{r:03}.dump.json");
        let payload = serde_json::json!({
            "replicate": r,
            "seed": seed,
            "theta0": entry.theta0,
            "updates_completed": entry.updates,
            "error": e.to_string(),
            "detail": format!("{e:?}"),
        });
        if write_json(&out_dir.join(&dump), &payload).is_ok() {
            entry.state_dump = Some(dump);
        }
    }
    (entry, ReplicateTiming { replicate: r, wall_time_s: start.elapsed().as_secs_f64() })
}

/// Everything a run needs before replicates start.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub config: Config,
    pub manifest: ExperimentManifest,
    pub out_dir: PathBuf,
    pub observations: Vec<f64>,
    pub data_sha256: String,
}

/// Creates the output directory, writes the resolved config and loads the data.
pub fn prepare_run(cfg: &Config, config_path: Option<&Path>, out_dir: &Path) -> Result<RunPlan> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml_string())?;
    let data = Path::new(&cfg.experiment.data);
    let observations = read_observations(data, cfg.experiment.max_observations)?;
    if observations.len() < 2 {
        return Err(Error::Data(format!("{} holds fewer than two observations", data.display())));
    }
    Ok(RunPlan {
        config: cfg.clone(),
        manifest: ExperimentManifest::from_config(cfg, config_path, out_dir),
        out_dir: out_dir.to_path_buf(),
        observations,
        data_sha256: file_sha256(data)?,
    })
}

/// Writes `index.json` and `timings.json` for completed replicates.
pub fn finish_run(plan: &RunPlan, mut results: Vec<(ReplicateEntry, ReplicateTiming)>) -> Result<RunIndex> {
    results.sort_by_key(|(e, _)| e.replicate);
    let index = RunIndex {
        config_hash: plan.config.hash(),
        config: plan.config.clone(),
        manifest: plan.manifest.clone(),
        data: plan.config.experiment.data.clone(),
        data_sha256: plan.data_sha256.clone(),
        observations: plan.observations.len(),
        replicates: results.iter().map(|(e, _)| e.clone()).collect(),
    };
    write_json(&plan.out_dir.join(INDEX_FILE), &index)?;
    let timings: Vec<_> = results.into_iter().map(|(_, t)| t).collect();
    write_json(&plan.out_dir.join(TIMINGS_FILE), &serde_json::json!({ "replicates": timings }))?;
    Ok(index)
}

/// Runs all replicates in this process on up to `jobs` threads.
pub fn cmd_run(cfg: &Config, config_path: Option<&Path>, out_dir: &Path, jobs: usize) -> Result<RunIndex> {
    let plan = prepare_run(cfg, config_path, out_dir)?;
    let jobs = jobs.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cfg.experiment.replicates) {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if r >= cfg.experiment.replicates {
                    break;
                }
                let res = run_replicate(&plan.config, r, &plan.observations, &plan.out_dir);
                results.lock().expect("no poisoned workers").push(res);
            });
        }
    });
    finish_run(&plan, results.into_inner().expect("no poisoned workers"))
}

/// Re-runs replicate `r` of a recorded run into `out_dir`.
pub fn relaunch(index: &RunIndex, r: usize, out_dir: &Path) -> Result<ReplicateEntry> {
    if r >= index.config.experiment.replicates {
        return Err(Error::InvalidInput(format!("replicate {r} not in index")));
    }
    let data = Path::new(&index.data);
    if file_sha256(data)? != index.data_sha256 {
        return Err(Error::Data(format!("{} changed since the run was recorded", data.display())));
    }
    let obs = read_observations(data, index.config.experiment.max_observations)?;
    std::fs::create_dir_all(out_dir)?;
    Ok(run_replicate(&index.config, r, &obs, out_dir).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryStats {
    pub run: String,
    pub algorithm: Algorithm,
    pub particles: usize,
    pub backward_draws: usize,
    pub param_names: Vec<String>,
    pub completed: usize,
    pub failed: usize,
    pub final_estimates: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Across-replicate sample variance (denominator `R - 1`) of the final estimates.
    pub variance: Vec<f64>,
}

/// Mean and unbiased sample variance per component.
pub fn mean_and_variance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let Some(first) = rows.first() else {
        return (Vec::new(), Vec::new());
    };
    let d = first.len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let var = (0..d)
        .map(|k| {
            if rows.len() < 2 {
                f64::NAN
            } else {
                rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)
            }
        })
        .collect();
    (mean, var)
}

/// Final-estimate statistics of one run directory (read from the trajectories).
pub fn summarize_run(dir: &Path) -> Result<RunSummaryStats> {
    let index = RunIndex::load(&dir.join(INDEX_FILE))?;
    let model = index.config.model()?;
    let mut finals = Vec::new();
    for e in index.replicates.iter().filter(|e| e.status == ReplicateStatus::Ok) {
        let rows = read_trajectory(&dir.join(&e.trajectory))?;
        let last = rows.last().ok_or_else(|| Error::Data(format!("{} is empty", e.trajectory)))?;
        finals.push(last.theta.clone());
    }
    let (mean, variance) = mean_and_variance(&finals);
    Ok(RunSummaryStats {
        run: dir.display().to_string(),
        algorithm: index.config.algorithm.kind,
        particles: index.config.algorithm.particles,
        backward_draws: index.config.algorithm.backward_draws,
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        completed: finals.len(),
        failed: index.failed(),
        final_estimates: finals,
        mean,
        variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<RunSummaryStats>,
    /// `variance(run 0) / variance(run k)` per component, for `k >= 1`.
    pub variance_ratios: Vec<Vec<f64>>,
}

pub fn summarize(dirs: &[PathBuf]) -> Result<Summary> {
    let runs = dirs.iter().map(|d| summarize_run(d)).collect::<Result<Vec<_>>>()?;
    let variance_ratios =
        runs.iter().skip(1).map(|r| runs[0].variance.iter().zip(&r.variance).map(|(a, b)| a / b).collect()).collect();
    Ok(Summary { runs, variance_ratios })
}
