//! The `validate` command: standing assumptions on a config.

use satwave_core::check_geometric_assumptions;
use satwave_core::feedback::{validate_assumptions, NonlinearitySpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub assumption: String,
    pub passed: bool,
    pub details: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

const GRID_POINTS: usize = 2001;

/// Sample grid covering ten thresholds either side of zero.
fn sample_grid(spec: &NonlinearitySpec) -> Vec<f64> {
    let span = match *spec {
        NonlinearitySpec::Identity => 10.0,
        NonlinearitySpec::Saturation { threshold } | NonlinearitySpec::ScaledSaturation { threshold, .. } => {
            10.0 * threshold
        }
    };
    let half = (GRID_POINTS / 2) as f64;
    (0..GRID_POINTS).map(|k| span * (k as f64 - half) / half).collect()
}

pub fn validate(config: &ExperimentConfig) -> anyhow::Result<ValidateReport> {
    let nl = config.nonlinearity.build()?;
    let nl_report = validate_assumptions(&nl, &sample_grid(&config.nonlinearity));
    let (monotone, sector): (Vec<_>, Vec<_>) = nl_report.violations.iter().cloned().partition(|v| {
        !matches!(
            v,
            satwave_core::feedback::Violation::SectorLower { .. } | satwave_core::feedback::Violation::SectorUpper { .. }
        )
    });
    let sector_info = nl.sector().map(|s| json!({ "lower": s.lower, "upper": s.upper, "threshold": s.threshold }));

    let mesh = Experiment::mesh(config)?;
    let x0 = config.x0.unwrap_or(config.mesh.default_x0());
    let geo = check_geometric_assumptions(&mesh, x0);

    let checks = vec![
        Check {
            name: "nonlinearity".into(),
            assumption: "Assumption 1".into(),
            passed: monotone.is_empty(),
            details: json!({ "name": nl_report.name, "samples": nl_report.samples, "violations": monotone }),
        },
        Check {
            name: "sector".into(),
            assumption: "Assumption 2".into(),
            passed: sector.is_empty() && sector_info.is_some(),
            details: json!({ "sector": sector_info, "violations": sector }),
        },
        Check {
            name: "geometry".into(),
            assumption: "Assumption 3".into(),
            passed: geo.assumption3_satisfied,
            details: json!({
                "x0": geo.x0,
                "min_separation": geo.min_separation,
                "max_h_dot_nu_on_free_boundary": geo.max_h_dot_nu_on_gamma1,
            }),
        },
    ];
    Ok(ValidateReport { passed: checks.iter().all(|c| c.passed), checks })
}
