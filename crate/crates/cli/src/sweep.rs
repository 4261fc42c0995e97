//! The `sweep` command: a grid of config overrides run concurrently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::analyze::{analyze, AnalyzeOptions};
use crate::config::ExperimentConfig;
use crate::io::{self, fmt_f64};
use crate::simulate::simulate;
use crate::UsageError;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 9] = [
    "index",
    "config_hash",
    "status",
    "final_energy",
    "alpha",
    "multiplier_residual",
    "p_phi_residual_max",
    "early_dissipation",
    "error",
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Inline base config, or a path relative to the sweep file.
    #[serde(alias = "base_config")]
    pub base: Value,
    /// Dotted key to candidate values; points form the cartesian product.
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
    /// Extra override sets, each combined with every grid point.
    #[serde(default)]
    pub overrides: Vec<Map<String, Value>>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> anyhow::Result<(Self, Value)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read sweep config {}: {e}", path.display())))?;
        let sweep: Self =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid sweep config: {e}")))?;
        let base = match &sweep.base {
            Value::String(rel) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(rel);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| UsageError(format!("cannot read base config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid base config: {e}")))?
            }
            Value::Object(_) => sweep.base.clone(),
            _ => return Err(UsageError("base must be an object or a path".into()).into()),
        };
        ExperimentConfig::from_json(&base.to_string())?;
        Ok((sweep, base))
    }

    /// Every override set, in grid order followed by the explicit list.
    pub fn points(&self) -> Vec<Map<String, Value>> {
        let mut points = vec![Map::new()];
        for (key, values) in &self.grid {
            points = points
                .iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(key.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        if self.overrides.is_empty() {
            return points;
        }
        points
            .iter()
            .flat_map(|p| {
                self.overrides.iter().map(move |o| {
                    let mut q = p.clone();
                    q.extend(o.clone());
                    q
                })
            })
            .collect()
    }
}

/// Sets `a.b.c` inside nested objects, creating missing levels.
pub fn set_dotted(target: &mut Value, key: &str, value: Value) -> anyhow::Result<()> {
    let mut cur = target;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| UsageError(format!("override {key}: {part} is not an object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| UsageError(format!("override {key}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub index: usize,
    pub config_hash: String,
    pub ok: bool,
    pub final_energy: Option<f64>,
    pub alpha: Option<f64>,
    pub multiplier_residual: Option<f64>,
    pub p_phi_residual_max: Option<f64>,
    pub early_dissipation: Option<f64>,
    pub error: String,
}

impl SummaryRow {
    fn cells(&self) -> Vec<String> {
        let num = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        vec![
            self.index.to_string(),
            self.config_hash.clone(),
            if self.ok { "ok" } else { "failed" }.to_string(),
            num(self.final_energy),
            num(self.alpha),
            num(self.multiplier_residual),
            num(self.p_phi_residual_max),
            num(self.early_dissipation),
            self.error.clone(),
        ]
    }
}

pub fn run_dir_name(index: usize) -> String {
    format!("run_{index:03}")
}

/// Runs every sweep point under `out` with at most `jobs` concurrent runs and
/// writes `summary.csv`. Individual failures become rows, never errors.
pub fn sweep(sweep: &SweepConfig, base: &Value, out: &Path, jobs: usize) -> anyhow::Result<Vec<SummaryRow>> {
    if jobs == 0 {
        return Err(UsageError("jobs must be at least 1".into()).into());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let points = sweep.points();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let mut rows: Vec<SummaryRow> = pool.install(|| {
        points.par_iter().enumerate().map(|(i, p)| run_point(i, base, p, &out.join(run_dir_name(i)))).collect()
    });
    rows.sort_by_key(|r| r.index);

    let path = out.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(SUMMARY_HEADER)?;
    for row in &rows {
        w.write_record(row.cells())?;
    }
    w.flush()?;
    Ok(rows)
}

fn run_point(index: usize, base: &Value, overrides: &Map<String, Value>, dir: &PathBuf) -> SummaryRow {
    let mut row = SummaryRow {
        index,
        config_hash: String::new(),
        ok: false,
        final_energy: None,
        alpha: None,
        multiplier_residual: None,
        p_phi_residual_max: None,
        early_dissipation: None,
        error: String::new(),
    };
    let result = (|| -> anyhow::Result<()> {
        let mut value = base.clone();
        for (k, v) in overrides {
            set_dotted(&mut value, k, v.clone())?;
        }
        let mut config = ExperimentConfig::from_json(&value.to_string())?;
        config.output_dir = None;
        row.config_hash = config.canonical_hash();
        let manifest = simulate(&config, dir)?;
        if let Some(s) = &manifest.summary {
            row.final_energy = Some(s.final_energy);
        }
        let records = io::read_trace(&dir.join(io::TRACE_FILE))?;
        row.early_dissipation = Some(early_dissipation(&records));
        if !manifest.succeeded() {
            anyhow::bail!(manifest.error.unwrap_or_else(|| "run failed".into()));
        }
        let report = analyze(dir, &AnalyzeOptions::default())?;
        row.alpha = report["fit"]["alpha"].as_f64();
        row.multiplier_residual = report["multiplier_residual"].as_f64();
        row.p_phi_residual_max = report["p_phi_residual_max"].as_f64();
        Ok(())
    })();
    match result {
        Ok(()) => row.ok = true,
        Err(e) => {
            log::warn!("sweep point {index} failed: {e:#}");
            row.error = format!("{e:#}");
        }
    }
    row
}

/// Time integral of the dissipation over the first tenth of the run.
fn early_dissipation(records: &[satwave_core::StepRecord]) -> f64 {
    let Some(last) = records.last() else { return 0.0 };
    let cutoff = last.t / 10.0;
    records
        .windows(2)
        .filter(|w| w[1].t <= cutoff + 1e-12)
        .map(|w| (w[1].t - w[0].t) * w[1].dissipation)
        .sum()
}
