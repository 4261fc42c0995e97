//! The `analyze` command: decay fit, Komornik check, multiplier residual and
//! bound monitor for a finished run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use satwave_core::analysis::{
    fit_decay, komornik_check, multiplier_identity_residual, p_phi_identity_residual, polynomial_bound_monitor, Snapshot,
};
use satwave_core::DiscreteOperators;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig};
use crate::io;
use crate::simulate::RunManifest;
use crate::svg::loglog_chart;
use crate::UsageError;

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    /// Output directory; the run directory when unset.
    pub out: Option<PathBuf>,
    /// Defaults to the run config's `r`, else 2.
    pub r: Option<f64>,
    /// Fit window; defaults to `[t_end/10, t_end]`.
    pub window: Option<(f64, f64)>,
    /// Multiplier interval; defaults to the full snapshot range.
    pub tau: Option<(f64, f64)>,
    pub svg: bool,
}

fn section<T: Serialize>(result: satwave_core::Result<T>) -> Value {
    match result {
        Ok(v) => serde_json::to_value(v).unwrap_or_else(|e| json!({ "error": e.to_string() })),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// Writes `analysis.json`, `bound_monitor.csv` and optionally `energy.svg`,
/// returning the report. Sections that cannot be computed carry an `error`
/// field instead of values.
pub fn analyze(run_dir: &Path, opts: &AnalyzeOptions) -> anyhow::Result<Value> {
    let trace_path = run_dir.join(io::TRACE_FILE);
    if !trace_path.is_file() {
        bail!("incomplete run: {} is missing", trace_path.display());
    }
    let manifest_path = run_dir.join(io::MANIFEST_FILE);
    if manifest_path.is_file() {
        let text = std::fs::read_to_string(&manifest_path)?;
        let manifest: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
        if !manifest.succeeded() {
            bail!("incomplete run: manifest reports failure: {}", manifest.error.unwrap_or_default());
        }
    }
    let config_path = run_dir.join(io::CONFIG_FILE);
    let config = if config_path.is_file() { Some(ExperimentConfig::load(&config_path)?) } else { None };

    let records = io::read_trace(&trace_path)?;
    if records.is_empty() {
        bail!("incomplete run: empty trace");
    }
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let energies: Vec<f64> = records.iter().map(|r| r.energy).collect();
    let t_end = times[times.len() - 1];

    let r = opts.r.or(config.as_ref().map(|c| c.r)).unwrap_or(2.0);
    if !(r >= 2.0) {
        return Err(UsageError(format!("r must be at least 2, got {r}")).into());
    }
    let window = opts.window.unwrap_or((t_end / 10.0, t_end));

    let fit = section(fit_decay(&times, &energies, Some(window)));
    let komornik = section(komornik_check(&times, &energies, (r - 1.0) / 2.0));
    let monitor = polynomial_bound_monitor(&times, &energies, r, opts.window.map(|w| w.0));
    let monitor_value = match &monitor {
        Ok(m) => serde_json::to_value(m)?,
        Err(e) => json!({ "error": e.to_string() }),
    };

    let (multiplier, multiplier_residual, p_phi) = match &config {
        Some(cfg) => snapshot_sections(run_dir, cfg, opts.tau, r),
        None => {
            let missing = json!({ "error": "run has no config; snapshot analysis skipped" });
            (missing.clone(), Value::Null, missing)
        }
    };

    let report = json!({
        "r": r,
        "fit": fit,
        "komornik": komornik,
        "multiplier_residual": multiplier_residual,
        "multiplier": multiplier,
        "p_phi_residual_max": p_phi,
        "bound_monitor": monitor_value,
    });

    let out = opts.out.clone().unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    io::write_json(&out.join(io::ANALYSIS_FILE), &report)?;
    let series = monitor.map(|m| m.series).unwrap_or_default();
    let exponent = 2.0 / (r - 1.0);
    io::write_series(&out.join(io::BOUND_MONITOR_FILE), ["t", &format!("t^{exponent}*energy")], &series)?;
    if opts.svg {
        let pts: Vec<(f64, f64)> = times.iter().copied().zip(energies.iter().copied()).collect();
        match loglog_chart("Energy", "t", "energy", &pts) {
            Some(svg) => std::fs::write(out.join(io::ENERGY_PLOT_FILE), svg)?,
            None => log::warn!("too few positive samples for an energy plot"),
        }
    }
    Ok(report)
}

fn snapshot_sections(run_dir: &Path, cfg: &ExperimentConfig, tau: Option<(f64, f64)>, r: f64) -> (Value, Value, Value) {
    let err = |e: &anyhow::Error| json!({ "error": format!("{e:#}") });
    let setup = || -> anyhow::Result<(DiscreteOperators, Vec<Snapshot>)> {
        let mesh = Experiment::mesh(cfg)?;
        let ops = DiscreteOperators::assemble(mesh)?;
        let snaps = io::read_snapshots(&run_dir.join(io::SNAPSHOT_DIR))?;
        Ok((ops, snaps))
    };
    let (ops, snaps) = match setup() {
        Ok(v) => v,
        Err(e) => return (err(&e), Value::Null, err(&e)),
    };
    let fb = match cfg.nonlinearity.build() {
        Ok(nl) => satwave_core::feedback::BoundaryFeedback::new(&ops, nl),
        Err(e) => {
            let e = anyhow::Error::new(e);
            return (err(&e), Value::Null, err(&e));
        }
    };
    let x0 = cfg.x0.unwrap_or(cfg.mesh.default_x0());
    let (t1, t2) = match (tau, snaps.first(), snaps.last()) {
        (Some(w), _, _) => w,
        (None, Some(a), Some(b)) => (a.t, b.t),
        _ => (0.0, 0.0),
    };
    let mult = multiplier_identity_residual(&ops, &fb, &snaps, t1, t2, r, x0);
    let residual = mult.as_ref().map_or(Value::Null, |m| json!(m.residual));
    let p_phi = p_phi_identity_residual(&ops, &fb, &snaps).map(|v| v.into_iter().fold(0.0, f64::max));
    (section(mult), residual, section(p_phi))
}
