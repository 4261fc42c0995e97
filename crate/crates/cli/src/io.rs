//! CSV and JSON files of a run directory.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use satwave_core::analysis::Snapshot;
use satwave_core::stepper::{Checkpoint, StepRecord};
use serde::Serialize;

pub const TRACE_FILE: &str = "trace.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const BOUND_MONITOR_FILE: &str = "bound_monitor.csv";
pub const ENERGY_PLOT_FILE: &str = "energy.svg";

pub const TRACE_HEADER: [&str; 6] = ["t", "energy", "dissipation", "kato_norm", "resolvent_iters", "resolvent_residual"];

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct TraceWriter {
    inner: csv::Writer<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(TRACE_HEADER)?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, r: &StepRecord) -> anyhow::Result<()> {
        self.inner.write_record([
            fmt_f64(r.t),
            fmt_f64(r.energy),
            fmt_f64(r.dissipation),
            fmt_f64(r.kato_norm),
            r.resolvent_iters.to_string(),
            fmt_f64(r.resolvent_residual),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_trace(path: &Path, records: &[StepRecord]) -> anyhow::Result<()> {
    let mut w = TraceWriter::create(path)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()
}

pub fn read_trace(path: &Path) -> anyhow::Result<Vec<StepRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(anyhow!("unexpected trace header {header:?}"));
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let num = |k: usize| -> anyhow::Result<f64> {
            row[k].trim().parse::<f64>().with_context(|| format!("row {} column {}", line + 1, TRACE_HEADER[k]))
        };
        out.push(StepRecord {
            t: num(0)?,
            energy: num(1)?,
            dissipation: num(2)?,
            kato_norm: num(3)?,
            resolvent_iters: row[4].trim().parse().with_context(|| format!("row {} resolvent_iters", line + 1))?,
            resolvent_residual: num(5)?,
        });
    }
    Ok(out)
}

/// Two-column CSV with a header row.
pub fn write_series(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for &(a, b) in rows {
        w.write_record([fmt_f64(a), fmt_f64(b)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn snapshot_name(step: usize) -> String {
    format!("snapshot_{step:06}.json")
}

pub fn write_snapshot(dir: &Path, step: usize, checkpoint: &Checkpoint) -> anyhow::Result<()> {
    let path = dir.join(snapshot_name(step));
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer(std::io::BufWriter::new(f), checkpoint)?;
    Ok(())
}

/// Snapshots of a run directory in time order.
pub fn read_snapshots(dir: &Path) -> anyhow::Result<Vec<Snapshot>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut snaps = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let c: Checkpoint = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        snaps.push(Snapshot { t: c.t, state: c.state()? });
    }
    snaps.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(snaps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRACE_FILE);
        let recs = vec![
            StepRecord { t: 0.0, energy: 1.0 / 3.0, dissipation: 0.0, kato_norm: 2.5, resolvent_iters: 0, resolvent_residual: 0.0 },
            StepRecord {
                t: 0.1,
                energy: 0.1f64.sqrt(),
                dissipation: 1e-300,
                kato_norm: std::f64::consts::PI,
                resolvent_iters: 3,
                resolvent_residual: 1.23456789e-11,
            },
        ];
        write_trace(&path, &recs).unwrap();
        assert_eq!(read_trace(&path).unwrap(), recs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,energy,dissipation,kato_norm,resolvent_iters,resolvent_residual\n"));
    }
}
