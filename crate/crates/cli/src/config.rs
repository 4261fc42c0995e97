//! Experiment configuration and its canonical hash.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, Context};
use nalgebra::DVector;
use satwave_core::feedback::{BoundaryFeedback, NonlinearitySpec};
use satwave_core::mesh::Point;
use satwave_core::stepper::{energy, make_strong_data, random_strong_data, Scheme, SolverConfig, State};
use satwave_core::{build_annulus_mesh, build_unit_square_mesh, DiscreteOperators, Mesh, Region};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    UnitSquare { n: usize },
    Annulus { r_inner: f64, r_outer: f64, resolution: f64 },
}

impl MeshSpec {
    pub fn build(&self) -> satwave_core::Result<Mesh> {
        match *self {
            MeshSpec::UnitSquare { n } => build_unit_square_mesh(n),
            MeshSpec::Annulus { r_inner, r_outer, resolution } => build_annulus_mesh(r_inner, r_outer, resolution),
        }
    }

    pub fn default_x0(&self) -> Point {
        match self {
            MeshSpec::UnitSquare { .. } => [0.5, 0.5],
            MeshSpec::Annulus { .. } => [0.0, 0.0],
        }
    }
}

/// Which boundary edges carry the feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Labels produced by the mesh builder: the whole square, the outer circle of an annulus.
    #[default]
    MeshDefault,
    AllActuated,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    /// `amplitude · sin(mπx) sin(nπy)` at rest; unit square only.
    Eigenfunction { m: u32, n: u32, amplitude: f64 },
    /// `amplitude · sin(kπ(ρ - r_inner)/(r_outer - r_inner)) cos(jθ)` at rest; annulus only.
    AnnulusMode { radial: u32, angular: u32, amplitude: f64 },
    /// Gaussian position bump at rest, trace removed.
    RadialBump { center: Point, width: f64, amplitude: f64 },
    RandomStrong { seed: u64, amplitude: f64 },
}

fn default_snapshot_every() -> usize {
    5
}

fn default_r() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mesh: MeshSpec,
    #[serde(default)]
    pub partition: Partition,
    /// Multiplier centre; defaults to the domain centre.
    #[serde(default)]
    pub x0: Option<Point>,
    pub nonlinearity: NonlinearitySpec,
    pub initial: InitialData,
    /// Rescales the initial datum to this energy.
    #[serde(default)]
    pub normalize_energy: Option<f64>,
    /// Defaults to twice the longest mesh edge.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default = "default_r")]
    pub r: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))?;
        cfg.check().map_err(|e| UsageError(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Structural checks that need no mesh.
    pub fn check(&self) -> anyhow::Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                bail!("dt must be positive, got {dt}");
            }
            if !(self.t_end > dt) {
                bail!("t_end = {} must exceed dt = {dt}", self.t_end);
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            bail!("t_end must be positive, got {}", self.t_end);
        }
        if self.snapshot_every == 0 {
            bail!("snapshot_every must be at least 1");
        }
        if !(self.r >= 2.0) {
            bail!("r must be at least 2, got {}", self.r);
        }
        if let Some(e) = self.normalize_energy {
            if !(e > 0.0 && e.is_finite()) {
                bail!("normalize_energy must be positive, got {e}");
            }
        }
        self.solver.validate()?;
        self.nonlinearity.build()?;
        match (&self.initial, &self.mesh) {
            (InitialData::Eigenfunction { m, n, .. }, MeshSpec::UnitSquare { .. }) if *m >= 1 && *n >= 1 => {}
            (InitialData::Eigenfunction { .. }, MeshSpec::UnitSquare { .. }) => bail!("eigenfunction indices start at 1"),
            (InitialData::Eigenfunction { .. }, _) => bail!("the eigenfunction preset needs a unit_square mesh"),
            (InitialData::AnnulusMode { radial, .. }, MeshSpec::Annulus { .. }) if *radial >= 1 => {}
            (InitialData::AnnulusMode { .. }, MeshSpec::Annulus { .. }) => bail!("annulus_mode radial index starts at 1"),
            (InitialData::AnnulusMode { .. }, _) => bail!("the annulus_mode preset needs an annulus mesh"),
            (InitialData::RadialBump { width, .. }, _) if !(*width > 0.0) => bail!("radial_bump width must be positive"),
            _ => {}
        }
        Ok(())
    }

    /// Hex SHA-256 of the key-sorted compact JSON form.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hash_value(&value)
    }
}

/// Hash of a JSON value with object keys sorted at every level.
pub fn hash_value(value: &serde_json::Value) -> String {
    // `serde_json::Map` is ordered by key unless `preserve_order` is enabled.
    let canonical = serde_json::to_string(value).expect("value serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Mesh, operators, feedback and initial state built from a config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub ops: std::sync::Arc<DiscreteOperators>,
    pub feedback: BoundaryFeedback,
    pub x0: Point,
    pub dt: f64,
    pub initial: State,
}

impl Experiment {
    pub fn mesh(config: &ExperimentConfig) -> anyhow::Result<Mesh> {
        let mesh = config.mesh.build().context("building mesh")?;
        Ok(match config.partition {
            Partition::MeshDefault => mesh,
            Partition::AllActuated => mesh.with_uniform_region(Region::Actuated),
            Partition::None => mesh.with_uniform_region(Region::Free),
        })
    }

    pub fn build(config: &ExperimentConfig) -> anyhow::Result<Self> {
        config.check().map_err(|e| UsageError(format!("invalid config: {e}")))?;
        let mesh = Self::mesh(config)?;
        let h = mesh.max_edge_length();
        let ops = std::sync::Arc::new(DiscreteOperators::assemble(mesh).context("assembling operators")?);
        let feedback = BoundaryFeedback::new(&ops, config.nonlinearity.build()?);
        let dt = config.dt.unwrap_or(2.0 * h);
        if !(config.t_end > dt) {
            return Err(UsageError(format!("t_end = {} must exceed dt = {dt}", config.t_end)).into());
        }
        let initial = initial_state(config, &ops, &feedback);
        Ok(Self { x0: config.x0.unwrap_or(config.mesh.default_x0()), config: config.clone(), ops, feedback, dt, initial })
    }
}

/// Position and velocity fields of a preset before the trace is fixed.
fn preset_fields(config: &ExperimentConfig, ops: &DiscreteOperators) -> (DVector<f64>, DVector<f64>) {
    let n = ops.num_nodes();
    let zero = DVector::zeros(n);
    match config.initial {
        InitialData::Zero => (zero.clone(), zero),
        InitialData::Eigenfunction { m, n: k, amplitude } => (
            ops.interpolate(|x| amplitude * (m as f64 * PI * x[0]).sin() * (k as f64 * PI * x[1]).sin()),
            zero,
        ),
        InitialData::AnnulusMode { radial, angular, amplitude } => {
            let MeshSpec::Annulus { r_inner, r_outer, .. } = config.mesh else { unreachable!("checked") };
            let u = ops.interpolate(|x| {
                let rho = x[0].hypot(x[1]);
                let s = ((rho - r_inner) / (r_outer - r_inner)).clamp(0.0, 1.0);
                amplitude * (radial as f64 * PI * s).sin() * (angular as f64 * x[1].atan2(x[0])).cos()
            });
            (u, zero)
        }
        InitialData::RadialBump { center, width, amplitude } => (
            ops.interpolate(|x| {
                let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                amplitude * (-d2 / (width * width)).exp()
            }),
            zero,
        ),
        InitialData::RandomStrong { .. } => unreachable!("handled by the caller"),
    }
}

fn initial_state(config: &ExperimentConfig, ops: &DiscreteOperators, fb: &BoundaryFeedback) -> State {
    let build = |scale: f64| match config.initial {
        InitialData::RandomStrong { seed, amplitude } => random_strong_data(ops, fb, seed, amplitude * scale),
        _ => {
            let (w, z) = preset_fields(config, ops);
            make_strong_data(ops, fb, &(w * scale), &(z * scale))
        }
    };
    let x = build(1.0);
    match config.normalize_energy {
        Some(target) => {
            let e = energy(ops, &x).unwrap_or(0.0);
            if e > 0.0 {
                build((target / e).sqrt())
            } else {
                x
            }
        }
        None => x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "mesh": {"type": "unit_square", "n": 6},
            "nonlinearity": {"type": "saturation", "S": 1.0},
            "initial": {"type": "eigenfunction", "m": 1, "n": 1, "amplitude": 1.0},
            "t_end": 1.0
        })
    }

    #[test]
    fn defaults_are_filled_in() {
        let cfg = ExperimentConfig::from_json(&base().to_string()).unwrap();
        assert_eq!(cfg.snapshot_every, 5);
        assert_eq!(cfg.r, 2.0);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.partition, Partition::MeshDefault);
        let exp = Experiment::build(&cfg).unwrap();
        assert!((exp.dt - 2.0 * 2f64.sqrt() / 6.0).abs() < 1e-15);
        assert_eq!(exp.x0, [0.5, 0.5]);
    }

    #[test]
    fn hash_ignores_field_order() {
        let a = ExperimentConfig::from_json(&base().to_string()).unwrap();
        let text = r#"{"t_end": 1.0, "initial": {"amplitude": 1.0, "n": 1, "m": 1, "type": "eigenfunction"},
            "nonlinearity": {"S": 1.0, "type": "saturation"}, "mesh": {"n": 6, "type": "unit_square"}}"#;
        let b = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(a.canonical_hash(), b.canonical_hash());
        let mut c = a.clone();
        c.t_end = 2.0;
        assert_ne!(a.canonical_hash(), c.canonical_hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut v = base();
        v["t_end"] = serde_json::json!(-1.0);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v = base();
        v["initial"] = serde_json::json!({"type": "annulus_mode", "radial": 1, "angular": 0, "amplitude": 1.0});
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v = base();
        v["bogus"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v = base();
        v["dt"] = serde_json::json!(2.0);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        assert!(ExperimentConfig::from_json("{not json").is_err());
    }

    #[test]
    fn energy_normalization() {
        let mut v = base();
        v["normalize_energy"] = serde_json::json!(1.0);
        let exp = Experiment::build(&ExperimentConfig::from_json(&v.to_string()).unwrap()).unwrap();
        assert!((energy(&exp.ops, &exp.initial).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn annulus_presets_are_strong_data() {
        let cfg = ExperimentConfig::from_json(
            &serde_json::json!({
                "mesh": {"type": "annulus", "r_inner": 0.5, "r_outer": 1.0, "resolution": 0.15},
                "nonlinearity": {"type": "saturation", "S": 0.5},
                "initial": {"type": "random_strong", "seed": 3, "amplitude": 2.0},
                "normalize_energy": 0.5,
                "t_end": 1.0
            })
            .to_string(),
        )
        .unwrap();
        let exp = Experiment::build(&cfg).unwrap();
        assert!(satwave_core::stepper::apply_generator(&exp.ops, &exp.feedback, &exp.initial).is_ok());
        assert!((energy(&exp.ops, &exp.initial).unwrap() - 0.5).abs() < 0.05);
    }
}
