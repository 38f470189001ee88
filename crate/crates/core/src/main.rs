use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use paris_rml::bench::{run_benchmark, stability_probe, BenchmarkOptions};
use paris_rml::config::Config;
use paris_rml::experiment::{
    self, cmd_simulate, finish_run, prepare_run, run_replicate, ReplicateEntry, ReplicateTiming, RunIndex, INDEX_FILE,
    RESOLVED_CONFIG_FILE,
};
use paris_rml::io::{read_observations, write_json};
use paris_rml::{oracle, Algorithm, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "paris-rml",
    version,
    about = "Online parameter estimation in state-space models with PaRIS-based RML"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file (defaults are used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location; overrides `experiment.out` (for `simulate`, the data file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["paris", "quadratic"])]
    algorithm: Option<String>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// No skip guard, no transition term in the first additive term, degeneracy is an error.
    #[arg(long, global = true)]
    paper_fidelity: bool,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate observations at `model.theta_star`.
    Simulate {
        /// Also write the hidden states as a third column.
        #[arg(long)]
        with_states: bool,
    },
    /// Run the replicated RML experiment.
    Run {
        /// Concurrent replicate jobs (0 = number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
        /// Run replicates as threads of this process instead of child processes.
        #[arg(long)]
        in_process: bool,
    },
    /// Re-run one replicate recorded in an index file.
    Relaunch {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        replicate: usize,
    },
    /// Time the PaRIS and quadratic updates over an N grid.
    Benchmark {
        /// Comma-separated N grid; overrides `benchmark.grid`.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
    },
    /// Check the Kalman and gradient oracles against finite differences.
    OracleCheck,
    /// Final-estimate statistics of run directories; variance ratios are relative to the first.
    Summarize {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    #[command(hide = true)]
    RunReplicate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        replicate: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ChildResult {
    entry: ReplicateEntry,
    timing: ReplicateTiming,
}

fn child_result_path(dir: &Path, r: usize) -> PathBuf {
    dir.join(format!(".replicate_{r:03}.result.json"))
}

fn load_config(c: &CommonArgs) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = c.seed {
        cfg.experiment.seed = s;
    }
    if let Some(a) = &c.algorithm {
        cfg.algorithm.kind = a.parse::<Algorithm>()?;
    }
    if let Some(r) = c.replicates {
        cfg.experiment.replicates = r;
    }
    if c.paper_fidelity {
        cfg.algorithm.paper_fidelity = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &CommonArgs, cfg: &Config) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.experiment.out))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn jobs_or_cpus(jobs: usize) -> usize {
    if jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        jobs
    }
}

/// Runs each replicate as a child process of this executable.
fn run_as_processes(cfg: &Config, config_path: Option<&Path>, dir: &Path, jobs: usize) -> Result<RunIndex> {
    let plan = prepare_run(cfg, config_path, dir)?;
    let exe = std::env::current_exe()?;
    let mut results = Vec::with_capacity(cfg.experiment.replicates);
    let mut pending = 0..cfg.experiment.replicates;
    let mut running: Vec<(usize, std::process::Child)> = Vec::new();
    loop {
        while running.len() < jobs {
            let Some(r) = pending.next() else { break };
            let child =
                Command::new(&exe).args(["run-replicate", "--replicate", &r.to_string(), "--dir"]).arg(dir).spawn()?;
            running.push((r, child));
        }
        if running.is_empty() {
            break;
        }
        let (r, mut child) = running.remove(0);
        let status = child.wait()?;
        let path = child_result_path(dir, r);
        let res: ChildResult = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(_) => {
                return Err(Error::Invariant(format!("replicate {r} job exited with {status} and left no result")));
            }
        };
        std::fs::remove_file(&path)?;
        results.push((res.entry, res.timing));
    }
    finish_run(&plan, results)
}

fn child_replicate(dir: &Path, r: usize) -> Result<bool> {
    let cfg = Config::load(&dir.join(RESOLVED_CONFIG_FILE))?;
    let obs = read_observations(Path::new(&cfg.experiment.data), cfg.experiment.max_observations)?;
    let (entry, timing) = run_replicate(&cfg, r, &obs, dir);
    let ok = entry.error.is_none();
    write_json(&child_result_path(dir, r), &ChildResult { entry, timing })?;
    Ok(ok)
}

fn report_run(index: &RunIndex, dir: &Path) -> ExitCode {
    for e in &index.replicates {
        match &e.error {
            None => eprintln!(
                "replicate {:3}: ok, {} updates ({} skipped) -> {}",
                e.replicate, e.updates, e.skipped, e.trajectory
            ),
            Some(msg) => eprintln!("replicate {:3}: FAILED: {msg}", e.replicate),
        }
    }
    eprintln!("index written to {}", dir.join(INDEX_FILE).display());
    if index.failed() > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn benchmark(cfg: &Config, dir: &Path, grid: Option<Vec<usize>>) -> Result<()> {
    let b = cfg.benchmark.clone().unwrap_or_default();
    let grid = grid.unwrap_or(b.grid.clone());
    let opts = BenchmarkOptions {
        n_tilde: b.backward_draws,
        min_sample: Duration::from_secs_f64(b.min_sample_ms / 1000.0),
        samples: b.samples,
        seed: cfg.experiment.seed,
    };
    let mut report = run_benchmark(&grid, &opts)?;
    report.config_hash = Some(cfg.hash());
    if b.stability_steps > 0 {
        report.stability = Some(stability_probe(
            b.stability_particles,
            b.backward_draws,
            b.stability_replicates,
            b.stability_steps,
            opts.seed,
        )?);
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join("benchmark.json");
    write_json(&path, &report)?;
    eprintln!("{:>10} {:>8} {:>14} {:>14}", "algorithm", "N", "median_s", "p90_s");
    for e in &report.entries {
        eprintln!("{:>10} {:>8} {:>14.6e} {:>14.6e}", e.algorithm, e.n, e.median_s, e.p90_s);
    }
    eprintln!("exponents: paris {:.3}, quadratic {:.3}", report.exponents.paris, report.exponents.quadratic);
    eprintln!("report written to {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match cli.command {
        Cmd::RunReplicate { dir, replicate } => {
            return Ok(if child_replicate(&dir, replicate)? { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Cmd::Relaunch { index, replicate } => {
            let idx = RunIndex::load(&index)?;
            let dir = c.out.clone().unwrap_or_else(|| index.parent().unwrap_or(Path::new(".")).to_path_buf());
            let entry = experiment::relaunch(&idx, replicate, &dir)?;
            print_json(&entry)?;
            return Ok(if entry.error.is_none() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Cmd::Summarize { runs } => {
            let s = experiment::summarize(&runs)?;
            if let Some(out) = &c.out {
                write_json(out, &s)?;
            }
            print_json(&s)?;
            return Ok(ExitCode::SUCCESS);
        }
        _ => {}
    }
    let cfg = load_config(c)?;
    match cli.command {
        Cmd::Simulate { with_states } => {
            let data = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.experiment.data));
            let meta = cmd_simulate(&cfg, &data, with_states)?;
            eprintln!("wrote {} observations to {}", meta.steps + 1, data.display());
            print_json(&meta)?;
        }
        Cmd::Run { jobs, in_process } => {
            let dir = out_dir(c, &cfg);
            let jobs = jobs_or_cpus(jobs.unwrap_or(cfg.experiment.jobs));
            let index = if in_process {
                experiment::cmd_run(&cfg, c.config.as_deref(), &dir, jobs)?
            } else {
                run_as_processes(&cfg, c.config.as_deref(), &dir, jobs)?
            };
            return Ok(report_run(&index, &dir));
        }
        Cmd::Benchmark { grid } => benchmark(&cfg, &out_dir(c, &cfg), grid)?,
        Cmd::OracleCheck => {
            let report = oracle::run_all(cfg.experiment.seed)?;
            if let Some(out) = &c.out {
                write_json(out, &report)?;
            }
            print_json(&report)?;
            if !report.all_pass {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::RunReplicate { .. } | Cmd::Relaunch { .. } | Cmd::Summarize { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
