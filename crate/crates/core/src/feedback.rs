//! Scalar feedback maps and the boundary feedback operator `Φ(v) = D P g(D* v)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::elliptic::DiscreteOperators;
use crate::error::{invalid, Result};
use crate::mesh::Region;

/// Linear-growth bounds `α₁|s| ≤ |g(s)| ≤ α₂|s|` for `|s| ≤ S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub threshold: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone)]
enum Map {
    Identity,
    /// `slope · sat_S(s)`.
    Saturation { threshold: f64, slope: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A nondecreasing, Lipschitz scalar map with `g(0) = 0`.
#[derive(Clone)]
pub struct Nonlinearity {
    map: Map,
    lipschitz: f64,
    sector: Option<Sector>,
    name: String,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("sector", &self.sector)
            .finish()
    }
}

impl Nonlinearity {
    pub fn identity() -> Self {
        Self {
            map: Map::Identity,
            lipschitz: 1.0,
            sector: Some(Sector { threshold: f64::MAX, lower: 1.0, upper: 1.0 }),
            name: "identity".into(),
        }
    }

    /// `sat_S(s) = s` for `|s| ≤ S`, `S sign(s)` otherwise.
    pub fn saturation(threshold: f64) -> Result<Self> {
        Self::scaled_saturation(threshold, 1.0).map(|mut g| {
            g.name = format!("saturation(S={threshold})");
            g
        })
    }

    /// `slope · sat_S(s)`.
    pub fn scaled_saturation(threshold: f64, slope: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return invalid(format!("saturation threshold must be positive, got {threshold}"));
        }
        if !(slope > 0.0 && slope.is_finite()) {
            return invalid(format!("saturation slope must be positive, got {slope}"));
        }
        Ok(Self {
            map: Map::Saturation { threshold, slope },
            lipschitz: slope,
            sector: Some(Sector { threshold, lower: slope, upper: slope }),
            name: format!("scaled_saturation(S={threshold}, slope={slope})"),
        })
    }

    /// A user-supplied map. The declared properties are only checked by
    /// sampling, see [`validate_assumptions`].
    pub fn custom(
        name: impl Into<String>,
        map: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        sector: Option<Sector>,
    ) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return invalid(format!("Lipschitz constant must be finite and nonnegative, got {lipschitz}"));
        }
        if let Some(s) = sector {
            if !(s.threshold > 0.0) || s.lower > s.upper || s.lower < 0.0 {
                return invalid(format!("inconsistent sector parameters {s:?}"));
            }
        }
        Ok(Self { map: Map::Custom(Arc::new(map)), lipschitz, sector, name: name.into() })
    }

    pub fn eval(&self, s: f64) -> f64 {
        match &self.map {
            Map::Identity => s,
            Map::Saturation { threshold, slope } => slope * s.clamp(-threshold, *threshold),
            Map::Custom(f) => f(s),
        }
    }

    /// An element of the generalized derivative at `s`; a centered difference
    /// for custom maps.
    pub fn slope(&self, s: f64) -> f64 {
        match &self.map {
            Map::Identity => 1.0,
            Map::Saturation { threshold, slope } => {
                if s.abs() <= *threshold {
                    *slope
                } else {
                    0.0
                }
            }
            Map::Custom(f) => {
                let h = 1e-7 * s.abs().max(1.0);
                ((f(s + h) - f(s - h)) / (2.0 * h)).max(0.0)
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn sector(&self) -> Option<Sector> {
        self.sector
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Serializable description of a built-in nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NonlinearitySpec {
    Identity,
    Saturation {
        #[serde(rename = "S")]
        threshold: f64,
    },
    ScaledSaturation {
        #[serde(rename = "S")]
        threshold: f64,
        slope: f64,
    },
}

impl NonlinearitySpec {
    pub fn build(&self) -> Result<Nonlinearity> {
        match *self {
            NonlinearitySpec::Identity => Ok(Nonlinearity::identity()),
            NonlinearitySpec::Saturation { threshold } => Nonlinearity::saturation(threshold),
            NonlinearitySpec::ScaledSaturation { threshold, slope } => {
                Nonlinearity::scaled_saturation(threshold, slope)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The grid lacks zero or points of both signs.
    IncompleteGrid { detail: String },
    NonzeroAtOrigin { value: f64 },
    Decreasing { a: f64, b: f64 },
    Lipschitz { a: f64, b: f64, ratio: f64 },
    Sign { s: f64, value: f64 },
    SectorLower { s: f64, value: f64 },
    SectorUpper { s: f64, value: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub name: String,
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks monotonicity, the Lipschitz bound, the sign condition and the
/// declared sector on the sample grid. Neighbouring pairs of the sorted grid
/// suffice for the pairwise conditions: both are preserved under chaining.
pub fn validate_assumptions(nl: &Nonlinearity, grid: &[f64]) -> ValidationReport {
    const TOL: f64 = 1e-12;
    let mut pts: Vec<f64> = grid.iter().copied().filter(|s| s.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut report = ValidationReport { name: nl.name().to_string(), samples: pts.len(), violations: Vec::new() };

    if !pts.contains(&0.0) || !pts.iter().any(|&s| s < 0.0) || !pts.iter().any(|&s| s > 0.0) {
        report.violations.push(Violation::IncompleteGrid {
            detail: "grid must contain 0 and points of both signs".into(),
        });
    }
    let vals: Vec<f64> = pts.iter().map(|&s| nl.eval(s)).collect();

    for (&s, &g) in pts.iter().zip(&vals) {
        if s == 0.0 {
            if g != 0.0 {
                report.violations.push(Violation::NonzeroAtOrigin { value: g });
            }
        } else if g * s.signum() <= 0.0 {
            report.violations.push(Violation::Sign { s, value: g });
        }
        if let Some(sec) = nl.sector() {
            if s.abs() <= sec.threshold {
                let a = s.abs();
                if g.abs() < sec.lower * a * (1.0 - TOL) {
                    report.violations.push(Violation::SectorLower { s, value: g });
                }
                if g.abs() > sec.upper * a * (1.0 + TOL) + TOL * a {
                    report.violations.push(Violation::SectorUpper { s, value: g });
                }
            }
        }
    }
    for k in 1..pts.len() {
        let (a, b) = (pts[k - 1], pts[k]);
        let (ga, gb) = (vals[k - 1], vals[k]);
        if gb < ga {
            report.violations.push(Violation::Decreasing { a, b });
        }
        let ratio = (gb - ga).abs() / (b - a);
        if ratio > nl.lipschitz() * (1.0 + TOL) + TOL {
            report.violations.push(Violation::Lipschitz { a, b, ratio });
        }
    }
    report
}

/// The feedback `g` together with the projection `P` onto `Γ₀`.
#[derive(Debug, Clone)]
pub struct BoundaryFeedback {
    nonlinearity: Nonlinearity,
    /// 1 on boundary nodes where the feedback acts, 0 elsewhere.
    mask: DVector<f64>,
}

impl BoundaryFeedback {
    /// Mask from the mesh partition: a boundary node is actuated when every
    /// boundary edge touching it lies in `Γ₀`. Nodes where `Γ₀` meets `Γ₁`
    /// therefore keep the homogeneous condition of `Γ₁`.
    pub fn new(ops: &DiscreteOperators, nonlinearity: Nonlinearity) -> Self {
        let mut mask = DVector::from_element(ops.num_boundary(), 1.0);
        let mut touched = vec![false; ops.num_boundary()];
        for e in ops.mesh().boundary_edges() {
            for &node in &e.nodes {
                let k = ops.boundary_index(node).expect("edge endpoint on boundary");
                touched[k] = true;
                if e.region == Region::Free {
                    mask[k] = 0.0;
                }
            }
        }
        debug_assert!(touched.iter().all(|&t| t));
        Self { nonlinearity, mask }
    }

    /// Explicit mask; entries must be 0 or 1.
    pub fn with_mask(nonlinearity: Nonlinearity, mask: DVector<f64>) -> Result<Self> {
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return invalid("feedback mask must be 0/1 valued");
        }
        Ok(Self { nonlinearity, mask })
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn mask(&self) -> &DVector<f64> {
        &self.mask
    }

    /// Boundary indices with mask 1.
    pub fn actuated(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&k| self.mask[k] == 1.0).collect()
    }

    /// `P g(b)` applied nodewise.
    pub fn project_feedback(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(b.len(), |k, _| if self.mask[k] == 1.0 { self.nonlinearity.eval(b[k]) } else { 0.0 })
    }

    /// Boundary value forced by the feedback: `u|Γ = -P g(D* v)`.
    pub fn feedback_trace(&self, ops: &DiscreteOperators, v: &DVector<f64>) -> DVector<f64> {
        -self.project_feedback(&ops.dstar(v))
    }

    /// `Φ(v) = D P g(D* v)`.
    pub fn phi(&self, ops: &DiscreteOperators, v: &DVector<f64>) -> DVector<f64> {
        ops.dirichlet_map(&self.project_feedback(&ops.dstar(v)))
    }

    /// Lumped `∫_{Γ₀} g(b) b dσ`.
    pub fn pairing(&self, ops: &DiscreteOperators, b: &DVector<f64>) -> f64 {
        ops.boundary_inner(&self.project_feedback(b), b)
    }
}

/// Operator norm in `L²(Ω)` of the self-adjoint map `v ↦ D P D* v`, by power
/// iteration.
pub fn feedback_operator_norm(ops: &DiscreteOperators, mask: &DVector<f64>) -> f64 {
    let apply = |v: &DVector<f64>| ops.dirichlet_map(&ops.dstar(v).component_mul(mask));
    let mut x = ops.interpolate(|p| 1.0 + 0.3 * p[0] - 0.2 * p[1]);
    let mut norm = 0.0;
    for _ in 0..500 {
        let y = apply(&x);
        let ny = ops.l2_norm(&y);
        let nx = ops.l2_norm(&x);
        if ny == 0.0 || nx == 0.0 {
            return 0.0;
        }
        let next = ny / nx;
        x = y / ny;
        if (next - norm).abs() <= 1e-10 * next {
            return next;
        }
        norm = next;
    }
    norm
}
