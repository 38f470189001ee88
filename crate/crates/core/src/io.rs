//! CSV and JSON artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! is a pure function of the values it holds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rml::StepRecord;

#[inline]
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `t,y` (and `x` when states are given) with a header row.
pub fn write_data_csv(path: &Path, observations: &[f64], states: Option<&[f64]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match states {
        Some(xs) => {
            if xs.len() != observations.len() {
                return Err(Error::InvalidInput("states and observations differ in length".into()));
            }
            writeln!(w, "t,y,x")?;
            for (t, (y, x)) in observations.iter().zip(xs).enumerate() {
                writeln!(w, "{t},{},{}", num(*y), num(*x))?;
            }
        }
        None => {
            writeln!(w, "t,y")?;
            for (t, y) in observations.iter().enumerate() {
                writeln!(w, "{t},{}", num(*y))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the `y` column of a data CSV. Lines starting with `#` are ignored.
pub fn read_observations(path: &Path, limit: Option<usize>) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Error::Data(format!("{}: no `y` column", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        if limit.is_some_and(|n| out.len() >= n) {
            break;
        }
        let rec = rec?;
        let field = rec.get(col).ok_or_else(|| Error::Data(format!("row {line}: missing y")))?;
        let y: f64 =
            field.trim().parse().map_err(|_| Error::Data(format!("row {line}: cannot parse `{field}` as a number")))?;
        if !y.is_finite() {
            return Err(Error::Data(format!("row {line}: non-finite observation")));
        }
        out.push(y);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Streams trajectory rows: `t, theta..., zeta..., T3, degenerate`.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path, param_names: &[&str], config_hash: &str, seed: u64) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# config_hash={config_hash} seed={seed}")?;
        let mut header = vec!["t".to_string()];
        header.extend(param_names.iter().map(|p| p.to_string()));
        header.extend(param_names.iter().map(|p| format!("zeta_{p}")));
        header.push("t3".into());
        header.push("degenerate".into());
        writeln!(out, "{}", header.join(","))?;
        Ok(TrajectoryWriter { out })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<()> {
        let mut row = vec![rec.t.to_string()];
        row.extend(rec.theta.iter().map(|v| num(*v)));
        row.extend(rec.score.zeta.iter().map(|v| num(*v)));
        row.push(num(rec.score.t3));
        row.push((rec.flags.skipped() as u8).to_string());
        writeln!(self.out, "{}", row.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Per-step diagnostics: effective sample size, weight total, mean tangent
/// statistic, accept-reject proposals per draw.
pub struct DiagnosticsWriter {
    out: BufWriter<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path, param_names: &[&str], config_hash: &str, seed: u64) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# config_hash={config_hash} seed={seed}")?;
        let mut header = vec!["t".to_string(), "ess".into(), "weight_total".into()];
        header.extend(param_names.iter().map(|p| format!("tau_bar_{p}")));
        header.extend(["proposals_per_draw".to_string(), "fallbacks".into(), "flags".into()]);
        writeln!(out, "{}", header.join(","))?;
        Ok(DiagnosticsWriter { out })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<()> {
        let d = &rec.diagnostics;
        let mut row = vec![(rec.t - 1).to_string(), num(d.ess), num(d.weight_total)];
        row.extend(d.tau_bar.iter().map(|v| num(*v)));
        row.push(num(d.proposals_per_draw));
        row.push(d.fallbacks.to_string());
        let f = rec.flags;
        row.push(format!(
            "{}{}{}{}",
            f.weight_collapse as u8, f.backward_degenerate as u8, f.score_degenerate as u8, f.tangent_reset as u8
        ));
        writeln!(self.out, "{}", row.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// A parsed trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub theta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub t3: f64,
    pub degenerate: bool,
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines().filter(|l| !matches!(l, Ok(s) if s.starts_with('#')));
    let header = lines.next().ok_or_else(|| Error::Data("empty trajectory file".into()))??;
    let cols = header.split(',').count();
    if cols < 5 || (cols - 3) % 2 != 0 {
        return Err(Error::Data(format!("unexpected trajectory header `{header}`")));
    }
    let d = (cols - 3) / 2;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            return Err(Error::Data(format!("trajectory row has {} fields, expected {cols}", f.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Data(format!("bad number `{s}`")));
        rows.push(TrajectoryRow {
            t: f[0].parse().map_err(|_| Error::Data(format!("bad step `{}`", f[0])))?,
            theta: f[1..1 + d].iter().map(|s| parse(s)).collect::<Result<_>>()?,
            zeta: f[1 + d..1 + 2 * d].iter().map(|s| parse(s)).collect::<Result<_>>()?,
            t3: parse(f[1 + 2 * d])?,
            degenerate: f[2 + 2 * d] == "1",
        });
    }
    Ok(rows)
}
