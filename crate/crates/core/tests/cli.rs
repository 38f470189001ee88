use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paris_rml::experiment::RunIndex;
use paris_rml::io::read_trajectory;

const BIN: &str = env!("CARGO_BIN_EXE_paris-rml");

const CONFIG: &str = r#"
[model]
id = "sv"
theta_star = [0.8, 0.1, 1.0]
param_floor = 0.01

[algorithm]
kind = "paris"
particles = 60

[experiment]
data = "data.csv"
steps = 150
seed = 9
replicates = 3
out = "out"
"#;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = cli(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    ok(dir.path(), &["simulate", "--config", "c.toml"]);
    dir
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn simulate_rows_header_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), CONFIG.replace("steps = 150", "steps = 10")).unwrap();
    ok(dir.path(), &["simulate", "--config", "c.toml", "--with-states"]);
    let first = read(dir.path().join("data.csv"));
    let text = String::from_utf8(first.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,y,x");
    assert_eq!(lines.len(), 12);
    let meta: serde_json::Value = serde_json::from_slice(&read(dir.path().join("data.csv.meta.json"))).unwrap();
    assert_eq!(meta["steps"], 10);
    assert_eq!(meta["theta_star"], serde_json::json!([0.8, 0.1, 1.0]));
    ok(dir.path(), &["simulate", "--config", "c.toml", "--with-states"]);
    assert_eq!(first, read(dir.path().join("data.csv")));
}

#[test]
fn run_is_byte_identical_on_rerun_and_relaunch() {
    let dir = workspace(CONFIG);
    let d = dir.path();
    ok(d, &["run", "--config", "c.toml", "--out", "a"]);
    ok(d, &["run", "--config", "c.toml", "--out", "a2", "--jobs", "2"]);
    ok(d, &["run", "--config", "c.toml", "--out", "b", "--in-process"]);
    let index = RunIndex::load(&d.join("a/index.json")).unwrap();
    assert_eq!(index.replicates.len(), 3);
    for e in &index.replicates {
        let a = read(d.join("a").join(&e.trajectory));
        assert_eq!(a, read(d.join("a2").join(&e.trajectory)));
        assert_eq!(a, read(d.join("b").join(&e.trajectory)));
        assert_eq!(read_trajectory(&d.join("a").join(&e.trajectory)).unwrap().len(), 150);
    }
    // index.json records the output directory, everything else must agree
    let strip = |p: &str| {
        let mut v: serde_json::Value = serde_json::from_slice(&read(d.join(p))).unwrap();
        v["manifest"]["out_dir"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip("a/index.json"), strip("a2/index.json"));
    ok(d, &["run", "--config", "c.toml", "--out", "a"]);
    let again = RunIndex::load(&d.join("a/index.json")).unwrap();
    assert_eq!(index, again);

    ok(d, &["relaunch", "--index", "a/index.json", "--replicate", "1", "--out", "re"]);
    let name = &index.replicates[1].trajectory;
    assert_eq!(read(d.join("a").join(name)), read(d.join("re").join(name)));
    assert!(!cli(d, &["relaunch", "--index", "a/index.json", "--replicate", "7", "--out", "re"]).status.success());
}

#[test]
fn trajectory_embeds_hash_and_seed() {
    let dir = workspace(CONFIG);
    let d = dir.path();
    ok(d, &["run", "--config", "c.toml", "--seed", "4", "--replicates", "1"]);
    let index = RunIndex::load(&d.join("out/index.json")).unwrap();
    let text = String::from_utf8(read(d.join("out/replicate_000.csv"))).unwrap();
    let first = text.lines().next().unwrap();
    assert_eq!(first, format!("# config_hash={} seed={}", index.config_hash, index.replicates[0].seed));
    assert_eq!(index.config.experiment.seed, 4);
}

#[test]
fn two_observations_give_one_update() {
    let dir = workspace(&CONFIG.replace("steps = 150", "steps = 1"));
    let d = dir.path();
    ok(d, &["run", "--config", "c.toml", "--replicates", "1", "--algorithm", "quadratic"]);
    let rows = read_trajectory(&d.join("out/replicate_000.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].t, 1);
}

#[test]
fn failing_replicates_are_recorded_and_exit_nonzero() {
    let dir = workspace(&CONFIG.replace("steps = 150", "steps = 20"));
    let d = dir.path();
    let mut data = String::from_utf8(read(d.join("data.csv"))).unwrap();
    data.push_str("21,1e200\n22,0.1\n");
    std::fs::write(d.join("data.csv"), data).unwrap();
    let o = cli(d, &["run", "--config", "c.toml", "--paper-fidelity"]);
    assert_eq!(o.status.code(), Some(1));
    let index = RunIndex::load(&d.join("out/index.json")).unwrap();
    assert_eq!(index.failed(), 3);
    for e in &index.replicates {
        assert!(e.error.is_some());
        assert!(d.join("out").join(e.state_dump.as_ref().unwrap()).exists());
    }
    ok(d, &["run", "--config", "c.toml", "--out", "guarded"]);
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (text, key) in [
        ("[algorithm]\nparticles = -3\n", "algorithm.particles"),
        ("[schedule]\nalpha = 2.0\n", "schedule.alpha"),
        ("[model]\nid = \"garch\"\n", "model.id"),
        ("[experiment]\nreplicates = 0\n", "experiment.replicates"),
        ("[experiment\n", "<root>"),
    ] {
        std::fs::write(d.join("bad.toml"), text).unwrap();
        let o = cli(d, &["simulate", "--config", "bad.toml"]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(key), "{text}: {err}");
    }
    assert_eq!(cli(d, &["run", "--config", "missing.toml"]).status.code(), Some(2));
}

#[test]
fn oracle_check_and_summarize() {
    let dir = workspace(&CONFIG.replace("steps = 150", "steps = 30"));
    let d = dir.path();
    let o = ok(d, &["oracle-check"]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["all_pass"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 8);

    ok(d, &["run", "--config", "c.toml", "--out", "p"]);
    ok(d, &["run", "--config", "c.toml", "--out", "q", "--algorithm", "quadratic"]);
    let o = ok(d, &["summarize", "p", "q", "--out", "summary.json"]);
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["runs"][0]["algorithm"], "paris");
    assert_eq!(s["runs"][1]["algorithm"], "quadratic");
    assert_eq!(s["runs"][0]["final_estimates"].as_array().unwrap().len(), 3);
    assert_eq!(s["variance_ratios"].as_array().unwrap().len(), 1);
    let saved: serde_json::Value = serde_json::from_slice(&read(d.join("summary.json"))).unwrap();
    assert_eq!(saved, s);
}
