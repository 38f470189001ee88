//! Timing of the PaRIS and quadratic tangent-statistic updates on identical
//! frozen inputs, log-log scaling fits, and a long-horizon stability probe.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{propagate, weight_cloud, ParticleCloud, Resampling};
use crate::model::{sv_simulate, ParameterVector, StateSpaceModel, SvModel};
use crate::rml::{rml_step, run_online, RmlOptions, RmlState, StepSchedule};
use crate::rng::Streams;
use crate::smoother::{
    genealogy_update, paris_update, quadratic_update, tau_mean, SmootherOptions, SmootherReport, TauStats,
};

/// Inputs of one smoother update, captured from a running filter.
#[derive(Debug, Clone)]
pub struct FrozenStep {
    pub tau: TauStats,
    pub prev: ParticleCloud,
    pub next: ParticleCloud,
    pub y: f64,
    pub theta: ParameterVector,
}

/// Runs the SV filter with `n` particles at fixed `theta` for `warmup` steps on
/// simulated data and returns the inputs of the following smoother update.
pub fn frozen_step(theta: &ParameterVector, n: usize, warmup: usize, seed: u64) -> Result<FrozenStep> {
    let model = SvModel::default();
    let (_, y) = sv_simulate(theta, warmup + 1, seed)?;
    let streams = Streams::new(seed ^ 0x5EED);
    let opts = RmlOptions { particles: n, schedule: StepSchedule::frozen(), ..RmlOptions::default() };
    let mut state = RmlState::init(&model, theta.clone(), n, &streams)?;
    for t in 0..warmup {
        state = rml_step(&state, y[t], y[t + 1], &model, &opts, &streams)?.0;
    }
    let prev = weight_cloud(&state.cloud, y[warmup], theta, &model)?;
    let (next, _) = propagate(&prev, theta, &model, &streams, Resampling::Multinomial)?;
    Ok(FrozenStep { tau: state.tau, prev, next, y: y[warmup], theta: theta.clone() })
}

#[derive(Debug, Clone, Copy)]
pub struct BenchmarkOptions {
    pub n_tilde: usize,
    pub min_sample: Duration,
    pub samples: usize,
    pub seed: u64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions { n_tilde: 2, min_sample: Duration::from_millis(20), samples: 5, seed: 1 }
    }
}

/// Algorithm name, N and the timed call.
type TimedJob<'a> = (&'static str, usize, Box<dyn FnMut() + 'a>);

/// Repetitions per sample: doubles until one sample lasts at least `min_sample`.
fn calibrate_reps(f: &mut dyn FnMut(), min_sample: Duration) -> usize {
    let mut reps = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..reps {
            f();
        }
        if start.elapsed() >= min_sample || reps >= 1 << 24 {
            return reps;
        }
        reps *= 2;
    }
}

/// Mean seconds per call over one sample of `reps` calls.
fn time_sample(f: &mut dyn FnMut(), reps: usize) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    start.elapsed().as_secs_f64() / reps as f64
}

/// Per-call timings: repetitions per sample double until one sample lasts
/// at least `min_sample`.
pub fn time_calls(mut f: impl FnMut(), min_sample: Duration, samples: usize) -> (Vec<f64>, usize) {
    let reps = calibrate_reps(&mut f, min_sample);
    ((0..samples).map(|_| time_sample(&mut f, reps)).collect(), reps)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub algorithm: String,
    pub n: usize,
    pub median_s: f64,
    pub p90_s: f64,
    pub reps_per_sample: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposals_per_draw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallbacks_per_update: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl MachineInfo {
    pub fn current() -> Self {
        MachineInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub paris: f64,
    pub quadratic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub machine: MachineInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub seed: u64,
    pub n_tilde: usize,
    pub grid: Vec<usize>,
    pub entries: Vec<BenchmarkEntry>,
    /// Fitted exponents of median time against `N`.
    pub exponents: ScalingFit,
    /// Median-time ratios between consecutive grid points.
    pub growth_paris: Vec<f64>,
    pub growth_quadratic: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityProbe>,
}

impl BenchmarkReport {
    pub fn medians(&self, algorithm: &str) -> Vec<f64> {
        self.entries.iter().filter(|e| e.algorithm == algorithm).map(|e| e.median_s).collect()
    }
}

/// Times both smoother updates at each `N` of `grid` (sorted ascending) on the
/// same frozen clouds from the SV model at `(0.8, 0.1, 1)`.
pub fn run_benchmark(grid: &[usize], opts: &BenchmarkOptions) -> Result<BenchmarkReport> {
    if grid.len() < 3 {
        return Err(Error::InvalidInput("benchmark grid needs at least 3 points".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let theta = ParameterVector::new(vec![0.8, 0.1, 1.0])?;
    let model = SvModel::default();
    let sopts = SmootherOptions { n_tilde: opts.n_tilde, ..SmootherOptions::default() };
    let frozen = grid.iter().map(|&n| frozen_step(&theta, n, 10, opts.seed)).collect::<Result<Vec<_>>>()?;
    let streams = Streams::new(opts.seed);
    let reports: Vec<SmootherReport> = frozen
        .iter()
        .map(|fs| paris_update(&fs.tau, &fs.prev, &fs.next, fs.y, &fs.theta, &model, &sopts, &streams).map(|r| r.1))
        .collect::<Result<_>>()?;
    let mut jobs: Vec<TimedJob<'_>> = Vec::new();
    for (fs, &n) in frozen.iter().zip(&grid) {
        let (model, sopts, streams) = (&model, &sopts, &streams);
        jobs.push((
            "paris",
            n,
            Box::new(move || {
                paris_update(&fs.tau, &fs.prev, &fs.next, fs.y, &fs.theta, model, sopts, streams)
                    .expect("frozen inputs are valid");
            }),
        ));
        jobs.push((
            "quadratic",
            n,
            Box::new(move || {
                quadratic_update(&fs.tau, &fs.prev, &fs.next, fs.y, &fs.theta, model, sopts)
                    .expect("frozen inputs are valid");
            }),
        ));
    }
    let reps: Vec<usize> = jobs.iter_mut().map(|(_, _, f)| calibrate_reps(f.as_mut(), opts.min_sample)).collect();
    // interleaved rounds, so slow phases of the machine touch every grid point
    let mut times = vec![Vec::with_capacity(opts.samples); jobs.len()];
    for _ in 0..opts.samples {
        for (k, (_, _, f)) in jobs.iter_mut().enumerate() {
            times[k].push(time_sample(f.as_mut(), reps[k]));
        }
    }
    let mut entries = Vec::new();
    for (k, (name, n, _)) in jobs.iter().enumerate() {
        let t = &mut times[k];
        t.sort_by(f64::total_cmp);
        let report = (*name == "paris").then(|| &reports[k / 2]);
        entries.push(BenchmarkEntry {
            algorithm: (*name).into(),
            n: *n,
            median_s: quantile(t, 0.5),
            p90_s: quantile(t, 0.9),
            reps_per_sample: reps[k],
            proposals_per_draw: report.map(|r| r.draws.proposals_per_draw()),
            fallbacks_per_update: report.map(|r| r.draws.fallbacks as f64),
        });
    }
    let ns: Vec<f64> = grid.iter().map(|&n| n as f64).collect();
    let med = |alg: &str| -> Vec<f64> { entries.iter().filter(|e| e.algorithm == alg).map(|e| e.median_s).collect() };
    let (mp, mq) = (med("paris"), med("quadratic"));
    let growth = |m: &[f64]| m.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(BenchmarkReport {
        machine: MachineInfo::current(),
        config_hash: None,
        seed: opts.seed,
        n_tilde: opts.n_tilde,
        grid,
        exponents: ScalingFit { paris: loglog_slope(&ns, &mp), quadratic: loglog_slope(&ns, &mq) },
        growth_paris: growth(&mp),
        growth_quadratic: growth(&mq),
        entries,
        stability: None,
    })
}

/// Mean wall time per RML step over `observations`.
pub fn time_rml_steps<M: StateSpaceModel>(
    model: M,
    opts: RmlOptions,
    observations: &[f64],
    theta0: ParameterVector,
    seed: u64,
) -> Result<f64> {
    let start = Instant::now();
    let s = run_online(observations.iter().copied(), model, opts, theta0, seed, |_| Ok(()))?;
    Ok(start.elapsed().as_secs_f64() / s.updates as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub t: usize,
    /// Across-replicate variance of the mean tangent statistic, PaRIS.
    pub var_paris: Vec<f64>,
    /// Same for the genealogy-tracing update.
    pub var_genealogy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityProbe {
    pub particles: usize,
    pub n_tilde: usize,
    pub replicates: usize,
    pub steps: usize,
    pub points: Vec<StabilityPoint>,
}

/// Runs `replicates` independent filters at fixed `(0.8, 0.1, 1)` on one data
/// set, updating PaRIS (`n_tilde`) and genealogy statistics side by side on the
/// same clouds, and records the across-replicate variance of their means.
pub fn stability_probe(
    particles: usize,
    n_tilde: usize,
    replicates: usize,
    steps: usize,
    seed: u64,
) -> Result<StabilityProbe> {
    if replicates < 2 || steps == 0 {
        return Err(Error::InvalidInput("stability probe needs >= 2 replicates and >= 1 step".into()));
    }
    let theta = ParameterVector::new(vec![0.8, 0.1, 1.0])?;
    let model = SvModel::default();
    let (_, y) = sv_simulate(&theta, steps, seed)?;
    let sopts = SmootherOptions { n_tilde, ..SmootherOptions::default() };
    let mut checkpoints: Vec<usize> =
        (0..).map(|k| (10.0 * 2f64.powf(k as f64 / 2.0)).round() as usize).take_while(|&t| t < steps).collect();
    checkpoints.push(steps);
    checkpoints.dedup();

    // means[r][c] = (paris mean, genealogy mean) at checkpoint c
    let mut means: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let streams = Streams::new(Streams::new(seed).child_seed(r));
        let mut cloud = crate::filter::init_cloud(&model, &theta, particles, &streams)?;
        let mut tau_p = TauStats::zeros(particles, 3);
        let mut tau_g = TauStats::zeros(particles, 3);
        let mut rec = Vec::with_capacity(checkpoints.len());
        for t in 0..steps {
            let w = weight_cloud(&cloud, y[t], &theta, &model)?;
            let (next, anc) = propagate(&w, &theta, &model, &streams, Resampling::Multinomial)?;
            tau_p = paris_update(&tau_p, &w, &next, y[t], &theta, &model, &sopts, &streams)?.0;
            tau_g = genealogy_update(&tau_g, &w, &next, &anc, y[t], &theta, &model, sopts.initial_term)?;
            cloud = next;
            if checkpoints.contains(&(t + 1)) {
                rec.push((tau_mean(&tau_p), tau_mean(&tau_g)));
            }
        }
        means.push(rec);
    }
    let points = checkpoints
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let var = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
                let rows: Vec<Vec<f64>> = means.iter().map(|m| pick(&m[c]).clone()).collect();
                crate::experiment::mean_and_variance(&rows).1
            };
            StabilityPoint { t, var_paris: var(|p| &p.0), var_genealogy: var(|p| &p.1) }
        })
        .collect();
    Ok(StabilityProbe { particles, n_tilde, replicates, steps, points })
}
