//! The `simulate` command: step a configured experiment and persist the run.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use satwave_core::analysis::fit_decay;
use satwave_core::stepper::{Checkpoint, StepRecord, Stepper};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::io::{self, TraceWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub num_nodes: usize,
    pub dt: f64,
    pub steps: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub max_resolvent_iters: usize,
    pub max_resolvent_residual: f64,
    /// Decay exponent over the last nine tenths of the run, when fittable.
    pub fitted_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
    pub summary: Option<RunSummary>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Runs `config` into `out` and writes the manifest. Solver failures leave the
/// partial trace on disk and are reported through the manifest status.
pub fn simulate(config: &ExperimentConfig, out: &Path) -> anyhow::Result<RunManifest> {
    let started = Instant::now();
    let snap_dir = out.join(io::SNAPSHOT_DIR);
    std::fs::create_dir_all(&snap_dir).with_context(|| format!("creating {}", snap_dir.display()))?;
    io::write_json(&out.join(io::CONFIG_FILE), config)?;
    let exp = Experiment::build(config)?;
    let hash = config.canonical_hash();

    let mut records = Vec::new();
    let outcome = run_steps(&exp, &hash, out, &mut records);

    let mut files = vec![io::CONFIG_FILE.to_string(), io::TRACE_FILE.to_string()];
    if outcome.is_ok() {
        files.push(io::CHECKPOINT_FILE.to_string());
    }
    let mut snaps: Vec<String> = std::fs::read_dir(&snap_dir)?
        .filter_map(|e| e.ok())
        .map(|e| format!("{}/{}", io::SNAPSHOT_DIR, e.file_name().to_string_lossy()))
        .collect();
    snaps.sort();
    files.extend(snaps);
    files.push(io::MANIFEST_FILE.to_string());

    let summary = summarize(&exp, &records);
    let manifest = RunManifest {
        config_hash: hash,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        status: if outcome.is_ok() { RunStatus::Ok } else { RunStatus::Failed },
        error: outcome.err().map(|e| format!("{e:#}")),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files,
        summary,
    };
    io::write_json(&out.join(io::MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn run_steps(exp: &Experiment, hash: &str, out: &Path, records: &mut Vec<StepRecord>) -> anyhow::Result<()> {
    let cfg = &exp.config;
    let stepper =
        Stepper::new(exp.ops.clone(), exp.feedback.clone(), cfg.solver.clone(), exp.dt, cfg.scheme).context("building stepper")?;
    let steps = (cfg.t_end / exp.dt - 1e-9).ceil() as usize;
    let snap_dir = out.join(io::SNAPSHOT_DIR);
    let mut trace = TraceWriter::create(&out.join(io::TRACE_FILE))?;

    let mut x = exp.initial.clone();
    let first = stepper.record(&x, 0.0)?;
    trace.push(&first)?;
    records.push(first);
    io::write_snapshot(&snap_dir, 0, &Checkpoint::new(0.0, &x, hash))?;

    let mut result = Ok(());
    for k in 0..steps {
        match stepper.step(&x, k as f64 * exp.dt) {
            Ok((next, rec)) => {
                x = next;
                trace.push(&rec)?;
                records.push(rec);
                let step = k + 1;
                if step % cfg.snapshot_every == 0 || step == steps {
                    io::write_snapshot(&snap_dir, step, &Checkpoint::new(rec.t, &x, hash))?;
                }
            }
            Err(e) => {
                result = Err(anyhow::Error::new(e).context(format!("step {} failed", k + 1)));
                break;
            }
        }
        if (k + 1) % 500 == 0 {
            log::info!("step {}/{steps}, energy {:.6e}", k + 1, records.last().map_or(0.0, |r| r.energy));
        }
    }
    trace.finish()?;
    if result.is_ok() {
        let t = records.last().map_or(0.0, |r| r.t);
        io::write_json(&out.join(io::CHECKPOINT_FILE), &Checkpoint::new(t, &x, hash))?;
    }
    result
}

fn summarize(exp: &Experiment, records: &[StepRecord]) -> Option<RunSummary> {
    let (first, last) = (records.first()?, records.last()?);
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let energies: Vec<f64> = records.iter().map(|r| r.energy).collect();
    let fitted_alpha = fit_decay(&times, &energies, Some((last.t / 10.0, last.t))).ok().map(|f| f.alpha);
    Some(RunSummary {
        num_nodes: exp.ops.num_nodes(),
        dt: exp.dt,
        steps: records.len() - 1,
        initial_energy: first.energy,
        final_energy: last.energy,
        max_resolvent_iters: records.iter().map(|r| r.resolvent_iters).max().unwrap_or(0),
        max_resolvent_residual: records.iter().map(|r| r.resolvent_residual).fold(0.0, f64::max),
        fitted_alpha,
    })
}
