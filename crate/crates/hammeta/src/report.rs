//! CSV and JSON artifacts. Every CSV opens with a `#` preamble carrying the
//! schema version and manifest hash; floats use the shortest representation
//! that round-trips.

use std::fmt::Write as _;
use std::path::Path;

use hammeta_core::evaluation::{mean_stderr, EvalReport, SummaryRow};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, SCHEMA_VERSION};

pub const EVAL_CSV_HEADER: &str = "seed,system,adaptation_step,rollout_time,err,gma";
pub const CKA_CSV_HEADER: &str = "seed,system,layer,adaptation_step,one_minus_cka";
pub const TRAINING_LOG_HEADER: &str = "iteration,mean_inner_pre_loss,mean_outer_loss,wall_time";

/// Long-format error table: one row per (seed, adaptation step, rollout time).
pub fn eval_csv(report: &EvalReport, manifest_sha256: &str) -> String {
    let mut out = format::csv_preamble(manifest_sha256);
    out.push_str(EVAL_CSV_HEADER);
    out.push('\n');
    for c in &report.curves {
        for ((t, e), g) in c.times.iter().zip(&c.errors).zip(&c.gma) {
            writeln!(out, "{},{},{},{t},{e},{g}", c.seed, c.system, c.adaptation_step).expect("string write");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub adaptation_step: usize,
    pub time_index: usize,
    pub rollout_time: f64,
    pub err_mean: f64,
    pub err_stderr: f64,
    pub gma_mean: f64,
    pub gma_stderr: f64,
    pub n_seeds: usize,
}

impl From<&SummaryRow> for SummaryEntry {
    fn from(r: &SummaryRow) -> Self {
        Self {
            adaptation_step: r.adaptation_step,
            time_index: r.time_index,
            rollout_time: r.rollout_time,
            err_mean: r.err_mean,
            err_stderr: r.err_stderr,
            gma_mean: r.gma_mean,
            gma_stderr: r.gma_stderr,
            n_seeds: r.n_seeds,
        }
    }
}

/// GMA over the whole rollout after one adaptation step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalGma {
    pub adaptation_step: usize,
    pub mean: f64,
    pub stderr: f64,
    /// In the order of [`EvalSummary::seeds`].
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub manifest_sha256: String,
    pub system: String,
    pub source: String,
    pub seeds: Vec<u64>,
    pub adaptation_steps: Vec<usize>,
    pub final_gma: Vec<FinalGma>,
    /// `(seed, adaptation_step)` pairs whose rollout stopped early.
    pub truncated: Vec<(u64, usize)>,
    pub rows: Vec<SummaryEntry>,
}

impl EvalSummary {
    pub fn new(report: &EvalReport, system: &str, source: &str, manifest_sha256: &str) -> Self {
        let seeds = report.seeds();
        let adaptation_steps = report.adaptation_steps();
        let final_gma = adaptation_steps
            .iter()
            .map(|&step| {
                let per_seed: Vec<f64> =
                    seeds.iter().filter_map(|&s| report.curve(s, step)).map(|c| c.final_gma()).collect();
                let (mean, stderr) = mean_stderr(&per_seed);
                FinalGma { adaptation_step: step, mean, stderr, per_seed }
            })
            .collect();
        let truncated = report.curves.iter().filter(|c| c.truncated).map(|c| (c.seed, c.adaptation_step)).collect();
        Self {
            schema_version: SCHEMA_VERSION,
            manifest_sha256: manifest_sha256.to_string(),
            system: system.to_string(),
            source: source.to_string(),
            seeds,
            adaptation_steps,
            final_gma,
            truncated,
            rows: report.summary().iter().map(SummaryEntry::from).collect(),
        }
    }

    pub fn final_gma_at(&self, step: usize) -> Option<&FinalGma> {
        self.final_gma.iter().find(|g| g.adaptation_step == step)
    }
}

/// One 1−CKA curve per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaCurve {
    pub seed: u64,
    pub values: Vec<f64>,
}

impl CkaCurve {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

pub fn cka_csv(curves: &[CkaCurve], system: &str, layer: &str, manifest_sha256: &str) -> String {
    let mut out = format::csv_preamble(manifest_sha256);
    out.push_str(CKA_CSV_HEADER);
    out.push('\n');
    for c in curves {
        for (step, v) in c.values.iter().enumerate() {
            writeln!(out, "{},{system},{layer},{step},{v}", c.seed).expect("string write");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaSummary {
    pub schema_version: u32,
    pub manifest_sha256: String,
    pub system: String,
    pub source: String,
    pub layer: String,
    pub seeds: Vec<u64>,
    /// Per-seed mean of 1−CKA over all recorded steps.
    pub curve_means: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

impl CkaSummary {
    pub fn new(curves: &[CkaCurve], system: &str, source: &str, layer: &str, manifest_sha256: &str) -> Self {
        let curve_means: Vec<f64> = curves.iter().map(CkaCurve::mean).collect();
        let (mean, stderr) = mean_stderr(&curve_means);
        Self {
            schema_version: SCHEMA_VERSION,
            manifest_sha256: manifest_sha256.to_string(),
            system: system.to_string(),
            source: source.to_string(),
            layer: layer.to_string(),
            seeds: curves.iter().map(|c| c.seed).collect(),
            curve_means,
            mean,
            stderr,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub mean_inner_pre_loss: f64,
    pub mean_outer_loss: f64,
    pub wall_time: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}\n", self.iteration, self.mean_inner_pre_loss, self.mean_outer_loss, self.wall_time)
    }
}

pub fn read_training_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {}: {msg}", line + 1));
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !seen_header {
            if line != TRAINING_LOG_HEADER {
                return Err(bad(n, "unexpected header"));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(n, "expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        rows.push(LogRow {
            iteration: f[0].parse().map_err(|_| bad(n, "bad iteration"))?,
            mean_inner_pre_loss: num(f[1])?,
            mean_outer_loss: num(f[2])?,
            wall_time: num(f[3])?,
        });
    }
    Ok(rows)
}

/// One row of the long-format error table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub seed: u64,
    pub adaptation_step: usize,
    pub rollout_time: f64,
    pub err: f64,
    pub gma: f64,
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().filter(|l| !l.starts_with('#')).enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("data row {n}: malformed"));
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push(EvalRow {
            seed: f[0].parse().map_err(|_| bad())?,
            adaptation_step: f[2].parse().map_err(|_| bad())?,
            rollout_time: f[3].parse().map_err(|_| bad())?,
            err: f[4].parse().map_err(|_| bad())?,
            gma: f[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}
