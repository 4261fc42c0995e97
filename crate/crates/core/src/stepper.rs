//! Closed-loop generator, its resolvent, and implicit time stepping.
//!
//! The state `[u, v]` lives in `L²(Ω) × H⁻¹(Ω)`; `v` is stored as an `L²`
//! coefficient vector and every `H⁻¹` quantity goes through `A⁻¹`.
//!
//! The resolvent equation `𝒜X + λX = F` reduces to
//! `Θ(v) = λ⁻¹v + Φ(v) + λA⁻¹v = A⁻¹f₂ - λ⁻¹f₁`, `u = λ⁻¹(f₁ + v)`.
//! Writing `L = λ⁻¹I + λA⁻¹` for the linear part, `Φ(v) = D P g(D*v)` only
//! depends on the trace values `b = (D*v)|Γ₀`, which solve the small system
//! `b + T g(b) = c` with `T = (D* L⁻¹ D)|Γ₀` and `c = (D* L⁻¹ rhs)|Γ₀`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::DiscreteOperators;
use crate::error::{invalid, Error, Result};
use crate::feedback::BoundaryFeedback;
use crate::sparse::SpdSolver;

/// Relative trace residual tolerated by [`apply_generator`].
pub const DOMAIN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl State {
    pub fn new(u: DVector<f64>, v: DVector<f64>) -> Self {
        assert_eq!(u.len(), v.len(), "state components differ in length");
        Self { u, v }
    }

    pub fn zeros(n: usize) -> Self {
        Self { u: DVector::zeros(n), v: DVector::zeros(n) }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn scale(&self, s: f64) -> State {
        State { u: &self.u * s, v: &self.v * s }
    }

    pub fn sub(&self, other: &State) -> State {
        State { u: &self.u - &other.u, v: &self.v - &other.v }
    }
}

/// `‖[u, v]‖_ℋ = (‖u‖²_{L²} + ‖v‖²_{H⁻¹})^{1/2}`.
pub fn state_norm(ops: &DiscreteOperators, x: &State) -> Result<f64> {
    let u = ops.l2_norm(&x.u);
    let v = ops.hminus1_norm(&x.v)?;
    Ok(u.hypot(v))
}

/// `ℰ(u, v) = ½(‖u‖²_{L²} + ‖v‖²_{H⁻¹})`.
pub fn energy(ops: &DiscreteOperators, x: &State) -> Result<f64> {
    let n = state_norm(ops, x)?;
    Ok(0.5 * n * n)
}

/// `∫_{Γ₀} g(D*v) D*v dσ` with lumped boundary quadrature.
pub fn dissipation(ops: &DiscreteOperators, fb: &BoundaryFeedback, v: &DVector<f64>) -> f64 {
    fb.pairing(ops, &ops.dstar(v))
}

/// `Θ(v) = λ⁻¹v + D P g(D*v) + λ A⁻¹ v`.
pub fn theta_apply(ops: &DiscreteOperators, fb: &BoundaryFeedback, lambda: f64, v: &DVector<f64>) -> DVector<f64> {
    v / lambda + fb.phi(ops, v) + lambda * ops.solve_a(v)
}

/// `𝒜[u, v] = [-v, A(u + Φ(v))]` together with `‖𝒜[u, v]‖_ℋ`.
pub fn apply_generator(ops: &DiscreteOperators, fb: &BoundaryFeedback, x: &State) -> Result<(State, f64)> {
    let mut w = &x.u + fb.phi(ops, &x.v);
    let residual = ops.trace_residual(&w);
    if residual > DOMAIN_TOLERANCE {
        return Err(Error::Precondition { what: "state is outside the generator domain".into(), residual });
    }
    ops.set_trace(&mut w, &DVector::zeros(ops.num_boundary()));
    let image = State { u: -&x.v, v: ops.apply_a(&w)? };
    let norm = state_norm(ops, &image)?;
    Ok((image, norm))
}

/// Strong initial data: `w` with its boundary values replaced so that
/// `u|Γ = -P g(D*z)`, paired with velocity `z`.
pub fn make_strong_data(ops: &DiscreteOperators, fb: &BoundaryFeedback, w: &DVector<f64>, z: &DVector<f64>) -> State {
    let mut u = w.clone();
    ops.set_trace(&mut u, &fb.feedback_trace(ops, z));
    State { u, v: z.clone() }
}

/// Smooth pseudo-random field: a sum of a few plane waves with seeded
/// directions, wavenumbers up to `3π` and phases, scaled to unit sup norm.
fn random_smooth_field(ops: &DiscreteOperators, rng: &mut ChaCha8Rng) -> DVector<f64> {
    const WAVES: usize = 6;
    let waves: Vec<(f64, f64, f64, f64)> = (0..WAVES)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let k = rng.random_range(0.5..3.0) * std::f64::consts::PI;
            (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-1.0..1.0))
        })
        .collect();
    let f = ops.interpolate(|x| waves.iter().map(|(kx, ky, ph, a)| a * (kx * x[0] + ky * x[1] + ph).sin()).sum());
    let m = f.amax();
    if m > 0.0 {
        f / m
    } else {
        f
    }
}

/// Seeded strong initial datum built by [`make_strong_data`] from smooth
/// random fields of sup norm `amplitude`.
pub fn random_strong_data(ops: &DiscreteOperators, fb: &BoundaryFeedback, seed: u64, amplitude: f64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_smooth_field(ops, &mut rng) * amplitude;
    let z = random_smooth_field(ops, &mut rng) * amplitude;
    make_strong_data(ops, fb, &w, &z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Semismooth Newton on the reduced trace system, with a fixed-point fallback.
    #[default]
    Newton,
    /// Damped fixed-point iteration, optionally Anderson-accelerated.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative tolerance on `‖Θ(v) - rhs‖_{L²} / (1 + ‖rhs‖_{L²})`.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the provably contractive fixed-point step, in `(0, 1]`.
    pub relaxation: f64,
    pub acceleration: bool,
    pub method: SolverMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, relaxation: 1.0, acceleration: true, method: SolverMethod::Newton }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return invalid(format!("solver tolerance must be positive, got {}", self.tol));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return invalid(format!("relaxation must lie in (0, 1], got {}", self.relaxation));
        }
        if self.max_iter == 0 {
            return invalid("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative `Θ` residual of the returned velocity.
    pub residual: f64,
}

/// Precomputed data for `(𝒜 + λ)⁻¹` at a fixed `λ`.
#[derive(Debug)]
pub struct ResolventSolver {
    lambda: f64,
    /// Factor of `K_II + λ² M_II`.
    shifted: SpdSolver,
    /// Boundary indices where the feedback acts.
    actuated: Vec<usize>,
    /// `T = (D* L⁻¹ D)|Γ₀`.
    coupling: DMatrix<f64>,
    /// `(D eᵢ, D eⱼ)_{L²}` over `Γ₀` nodes.
    extension_gram: DMatrix<f64>,
    /// Lumped boundary weights on `Γ₀`.
    weights: DVector<f64>,
    /// Lipschitz constant of `v ↦ L⁻¹Φ(v)` in the `L`-metric.
    lipschitz: f64,
}

impl ResolventSolver {
    pub fn new(ops: &DiscreteOperators, fb: &BoundaryFeedback, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return invalid(format!("resolvent parameter must be positive, got {lambda}"));
        }
        let shifted = SpdSolver::new(
            &ops.stiffness_interior().linear_combination(1.0, ops.mass_interior(), lambda * lambda),
        )?;
        let actuated = fb.actuated();
        let n0 = actuated.len();
        let nb = ops.num_boundary();
        let mut solver = Self {
            lambda,
            shifted,
            coupling: DMatrix::zeros(n0, n0),
            extension_gram: DMatrix::zeros(n0, n0),
            weights: DVector::from_iterator(n0, actuated.iter().map(|&k| ops.lumped_boundary_mass()[k])),
            actuated,
            lipschitz: 0.0,
        };

        let mut extensions = Vec::with_capacity(n0);
        for j in 0..n0 {
            let mut e = DVector::zeros(nb);
            e[solver.actuated[j]] = 1.0;
            let de = ops.dirichlet_map(&e);
            let col = ops.dstar(&solver.apply_linear_inverse(ops, &de));
            for i in 0..n0 {
                solver.coupling[(i, j)] = col[solver.actuated[i]];
            }
            extensions.push(de);
        }
        let mass_ext: Vec<_> = extensions.iter().map(|d| ops.mass().mul_vec(d)).collect();
        for i in 0..n0 {
            for j in 0..=i {
                let g = extensions[i].dot(&mass_ext[j]);
                solver.extension_gram[(i, j)] = g;
                solver.extension_gram[(j, i)] = g;
            }
        }

        if n0 > 0 {
            // W T is symmetric; its W-norm is the spectral radius of W^½ T W^-½.
            let sw = solver.weights.map(f64::sqrt);
            let mut sym = DMatrix::from_fn(n0, n0, |i, j| sw[i] * solver.coupling[(i, j)] / sw[j]);
            sym = 0.5 * (&sym + sym.transpose());
            let norm = sym.symmetric_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.abs()));
            solver.lipschitz = fb.nonlinearity().lipschitz() * norm;
        }
        Ok(solver)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Lipschitz constant of the feedback part relative to the linear part.
    pub fn coupling_lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `L⁻¹ r` with `L = λ⁻¹I + λA⁻¹`.
    pub fn apply_linear_inverse(&self, ops: &DiscreteOperators, r: &DVector<f64>) -> DVector<f64> {
        let lam = self.lambda;
        let load = ops.restrict_interior(&ops.mass().mul_vec(r)) * lam;
        let p = ops.extend_by_zero(&self.shifted.solve(&load));
        (r - lam * p) * lam
    }

    /// Solves `Θ(v) = rhs` for `v`.
    pub fn solve_theta(
        &self,
        ops: &DiscreteOperators,
        fb: &BoundaryFeedback,
        cfg: &SolverConfig,
        rhs: &DVector<f64>,
        guess: Option<&DVector<f64>>,
    ) -> Result<(DVector<f64>, SolveStats)> {
        cfg.validate()?;
        let rhs_norm = ops.l2_norm(rhs);
        let target = cfg.tol * (1.0 + rhs_norm);
        let linv_rhs = self.apply_linear_inverse(ops, rhs);

        let (v, iterations) = if self.actuated.is_empty() {
            (linv_rhs, 0)
        } else {
            let restrict = |full: &DVector<f64>| {
                DVector::from_iterator(self.actuated.len(), self.actuated.iter().map(|&k| full[k]))
            };
            let c = restrict(&ops.dstar(&linv_rhs));
            let b0 = match guess {
                Some(v0) => restrict(&ops.dstar(v0)),
                None => DVector::zeros(c.len()),
            };
            let trace = TraceSystem { solver: self, g: fb.nonlinearity(), c };
            // The estimate is exact in exact arithmetic; leave headroom for the
            // recomputed residual below.
            let (b, iterations) = match cfg.method {
                SolverMethod::Newton => trace.newton(b0, 0.25 * target, cfg)?,
                SolverMethod::FixedPoint => trace.fixed_point(b0, 0.25 * target, cfg)?,
            };
            let z = trace.feedback(&b);
            let mut zb = DVector::zeros(ops.num_boundary());
            for (j, &k) in self.actuated.iter().enumerate() {
                zb[k] = z[j];
            }
            let v = self.apply_linear_inverse(ops, &(rhs - ops.dirichlet_map(&zb)));
            (v, iterations)
        };

        let residual = ops.l2_norm(&(theta_apply(ops, fb, self.lambda, &v) - rhs)) / (1.0 + rhs_norm);
        if residual > cfg.tol {
            return Err(Error::NonConvergence { iterations, residual });
        }
        Ok((v, SolveStats { iterations, residual }))
    }

    /// Solves `𝒜[u, v] + λ[u, v] = [f₁, f₂]`.
    pub fn solve(
        &self,
        ops: &DiscreteOperators,
        fb: &BoundaryFeedback,
        cfg: &SolverConfig,
        f1: &DVector<f64>,
        f2: &DVector<f64>,
        guess: Option<&DVector<f64>>,
    ) -> Result<(State, SolveStats)> {
        let rhs = ops.solve_a(f2) - f1 / self.lambda;
        let (v, stats) = self.solve_theta(ops, fb, cfg, &rhs, guess)?;
        let u = (f1 + &v) / self.lambda;
        Ok((State { u, v }, stats))
    }
}

/// `F(b) = b + T g(b) - c` on the actuated trace nodes.
struct TraceSystem<'a> {
    solver: &'a ResolventSolver,
    g: &'a crate::feedback::Nonlinearity,
    c: DVector<f64>,
}

impl TraceSystem<'_> {
    fn feedback(&self, b: &DVector<f64>) -> DVector<f64> {
        b.map(|s| self.g.eval(s))
    }

    fn residual(&self, b: &DVector<f64>) -> DVector<f64> {
        b + &self.solver.coupling * self.feedback(b) - &self.c
    }

    fn weighted_norm(&self, r: &DVector<f64>) -> f64 {
        r.iter().zip(self.solver.weights.iter()).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
    }

    /// `‖Θ(v(b)) - rhs‖_{L²}`, where `v(b)` is the velocity built from `g(b)`.
    fn theta_residual(&self, b: &DVector<f64>) -> f64 {
        let next = &self.c - &self.solver.coupling * self.feedback(b);
        let dz = self.feedback(&next) - self.feedback(b);
        dz.dot(&(&self.solver.extension_gram * &dz)).max(0.0).sqrt()
    }

    fn fixed_point_step(&self, b: &DVector<f64>, relaxation: f64) -> DVector<f64> {
        let omega = relaxation / (1.0 + self.solver.lipschitz).powi(2);
        b - omega * self.residual(b)
    }

    fn newton(&self, mut b: DVector<f64>, target: f64, cfg: &SolverConfig) -> Result<(DVector<f64>, usize)> {
        let n = b.len();
        for it in 0..cfg.max_iter {
            if self.theta_residual(&b) <= target {
                return Ok((b, it));
            }
            let r = self.residual(&b);
            let slopes = b.map(|s| self.g.slope(s));
            let mut jac = DMatrix::identity(n, n);
            for j in 0..n {
                for i in 0..n {
                    jac[(i, j)] += self.solver.coupling[(i, j)] * slopes[j];
                }
            }
            let step = jac.lu().solve(&(-&r));
            let r_norm = self.weighted_norm(&r);
            let mut accepted = false;
            if let Some(step) = step {
                let mut alpha = 1.0;
                while alpha >= 1.0 / 64.0 {
                    let trial = &b + alpha * &step;
                    if self.weighted_norm(&self.residual(&trial)) < (1.0 - 1e-4 * alpha) * r_norm {
                        b = trial;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
            }
            if !accepted {
                b = self.fixed_point_step(&b, cfg.relaxation);
            }
        }
        let residual = self.theta_residual(&b);
        if residual <= target {
            Ok((b, cfg.max_iter))
        } else {
            Err(Error::NonConvergence { iterations: cfg.max_iter, residual })
        }
    }

    fn fixed_point(&self, mut b: DVector<f64>, target: f64, cfg: &SolverConfig) -> Result<(DVector<f64>, usize)> {
        const DEPTH: usize = 5;
        let mut history: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
        for it in 0..cfg.max_iter {
            if self.theta_residual(&b) <= target {
                return Ok((b, it));
            }
            let mapped = self.fixed_point_step(&b, cfg.relaxation);
            let f = &mapped - &b;
            let mut next = mapped.clone();
            if cfg.acceleration {
                history.push((mapped.clone(), f.clone()));
                if history.len() > DEPTH + 1 {
                    history.remove(0);
                }
                if let Some(acc) = anderson(&history) {
                    if self.weighted_norm(&self.residual(&acc)) < self.weighted_norm(&self.residual(&mapped)) {
                        next = acc;
                    }
                }
            }
            b = next;
        }
        let residual = self.theta_residual(&b);
        if residual <= target {
            Ok((b, cfg.max_iter))
        } else {
            Err(Error::NonConvergence { iterations: cfg.max_iter, residual })
        }
    }
}

/// Type-II Anderson mixing over `(G(x_k), G(x_k) - x_k)` pairs.
fn anderson(history: &[(DVector<f64>, DVector<f64>)]) -> Option<DVector<f64>> {
    let m = history.len();
    if m < 2 {
        return None;
    }
    let n = history[0].1.len();
    let (g_last, f_last) = &history[m - 1];
    let df = DMatrix::from_fn(n, m - 1, |i, k| history[k + 1].1[i] - history[k].1[i]);
    let dg = DMatrix::from_fn(n, m - 1, |i, k| history[k + 1].0[i] - history[k].0[i]);
    let gamma = df.svd(true, true).solve(f_last, 1e-12).ok()?;
    let out = g_last - dg * gamma;
    out.iter().all(|x| x.is_finite()).then_some(out)
}

/// One-shot resolvent solve; builds the reduced system for `λ` every call.
pub fn solve_resolvent(
    ops: &DiscreteOperators,
    fb: &BoundaryFeedback,
    cfg: &SolverConfig,
    lambda: f64,
    f1: &DVector<f64>,
    f2: &DVector<f64>,
) -> Result<(State, SolveStats)> {
    ResolventSolver::new(ops, fb, lambda)?.solve(ops, fb, cfg, f1, f2, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `X⁺ = (I + dt 𝒜)⁻¹ X`.
    #[default]
    ImplicitEuler,
    /// `X⁺ = 2 (I + dt/2 𝒜)⁻¹ X - X`, energy conserving for skew `𝒜`.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub kato_norm: f64,
    pub resolvent_iters: usize,
    pub resolvent_residual: f64,
}

/// Time stepper over shared operators; holds the reduced resolvent for its `dt`.
#[derive(Debug)]
pub struct Stepper {
    ops: Arc<DiscreteOperators>,
    fb: BoundaryFeedback,
    cfg: SolverConfig,
    dt: f64,
    scheme: Scheme,
    resolvent: ResolventSolver,
}

impl Stepper {
    pub fn new(
        ops: Arc<DiscreteOperators>,
        fb: BoundaryFeedback,
        cfg: SolverConfig,
        dt: f64,
        scheme: Scheme,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        cfg.validate()?;
        let lambda = match scheme {
            Scheme::ImplicitEuler => 1.0 / dt,
            Scheme::Midpoint => 2.0 / dt,
        };
        let resolvent = ResolventSolver::new(&ops, &fb, lambda)?;
        Ok(Self { ops, fb, cfg, dt, scheme, resolvent })
    }

    pub fn ops(&self) -> &Arc<DiscreteOperators> {
        &self.ops
    }

    pub fn feedback(&self) -> &BoundaryFeedback {
        &self.fb
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn resolvent(&self) -> &ResolventSolver {
        &self.resolvent
    }

    /// Record for a state that needs no solve (typically the initial datum).
    pub fn record(&self, x: &State, t: f64) -> Result<StepRecord> {
        Ok(StepRecord {
            t,
            energy: energy(&self.ops, x)?,
            dissipation: dissipation(&self.ops, &self.fb, &x.v),
            kato_norm: apply_generator(&self.ops, &self.fb, x)?.1,
            resolvent_iters: 0,
            resolvent_residual: 0.0,
        })
    }

    /// Advances `x` from time `t` by one step. For the midpoint scheme the
    /// dissipation and Kato norm are evaluated at the half-step state.
    pub fn step(&self, x: &State, t: f64) -> Result<(State, StepRecord)> {
        let lam = self.resolvent.lambda();
        let (half, stats) = self.resolvent.solve(
            &self.ops,
            &self.fb,
            &self.cfg,
            &(&x.u * lam),
            &(&x.v * lam),
            Some(&x.v),
        )?;
        let next = match self.scheme {
            Scheme::ImplicitEuler => half.clone(),
            Scheme::Midpoint => half.scale(2.0).sub(x),
        };
        let record = StepRecord {
            t: t + self.dt,
            energy: energy(&self.ops, &next)?,
            dissipation: dissipation(&self.ops, &self.fb, &half.v),
            kato_norm: apply_generator(&self.ops, &self.fb, &half)?.1,
            resolvent_iters: stats.iterations,
            resolvent_residual: stats.residual,
        };
        Ok((next, record))
    }
}

/// One implicit Euler step; assembles the reduced resolvent on every call.
pub fn step(
    x: &State,
    dt: f64,
    ops: Arc<DiscreteOperators>,
    fb: &BoundaryFeedback,
    cfg: &SolverConfig,
) -> Result<(State, StepRecord)> {
    Stepper::new(ops, fb.clone(), cfg.clone(), dt, Scheme::ImplicitEuler)?.step(x, 0.0)
}

/// Restart file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(t: f64, x: &State, config_hash: impl Into<String>) -> Self {
        Self { t, u: x.u.iter().copied().collect(), v: x.v.iter().copied().collect(), config_hash: config_hash.into() }
    }

    pub fn state(&self) -> Result<State> {
        if self.u.len() != self.v.len() {
            return invalid("checkpoint components differ in length");
        }
        Ok(State { u: DVector::from_vec(self.u.clone()), v: DVector::from_vec(self.v.clone()) })
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::feedback::Nonlinearity;
    use crate::mesh::build_unit_square_mesh;

    fn setup(n: usize) -> (Arc<DiscreteOperators>, BoundaryFeedback) {
        let ops = Arc::new(DiscreteOperators::assemble(build_unit_square_mesh(n).unwrap()).unwrap());
        let fb = BoundaryFeedback::new(&ops, Nonlinearity::saturation(1.0).unwrap());
        (ops, fb)
    }

    fn mode(x: [f64; 2]) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    #[test]
    fn energy_of_eigenfunction_position() {
        let (ops, _) = setup(32);
        let x = State::new(ops.interpolate(mode), DVector::zeros(ops.num_nodes()));
        let e = energy(&ops, &x).unwrap();
        assert!((e - 0.125).abs() / 0.125 < 0.01, "energy {e}");
    }

    #[test]
    fn energy_of_eigenfunction_velocity() {
        let (ops, _) = setup(32);
        let x = State::new(DVector::zeros(ops.num_nodes()), ops.interpolate(mode));
        let e = energy(&ops, &x).unwrap();
        let exact = 0.125 / (2.0 * PI * PI);
        assert!((e - exact).abs() / exact < 0.02, "energy {e}");
    }

    #[test]
    fn zero_state_is_an_equilibrium() {
        let (ops, fb) = setup(8);
        let stepper = Stepper::new(ops.clone(), fb, SolverConfig::default(), 0.1, Scheme::ImplicitEuler).unwrap();
        let zero = State::zeros(ops.num_nodes());
        let (next, rec) = stepper.step(&zero, 0.0).unwrap();
        assert_eq!(next, zero);
        assert_eq!(rec.energy, 0.0);
        assert_eq!(rec.dissipation, 0.0);
        assert_eq!(rec.kato_norm, 0.0);
    }

    #[test]
    fn resolvent_of_zero_is_zero() {
        let (ops, fb) = setup(6);
        let z = DVector::zeros(ops.num_nodes());
        let (x, _) = solve_resolvent(&ops, &fb, &SolverConfig::default(), 3.0, &z, &z).unwrap();
        assert_eq!(x.u.amax(), 0.0);
        assert_eq!(x.v.amax(), 0.0);
    }

    #[test]
    fn theta_without_actuation_is_linear() {
        let (ops, _) = setup(6);
        let fb = BoundaryFeedback::with_mask(Nonlinearity::identity(), DVector::zeros(ops.num_boundary())).unwrap();
        let v = ops.interpolate(|x| x[0] - x[1] * x[1] + 0.3);
        let lam = 2.5;
        let expected = &v / lam + lam * ops.solve_a(&v);
        assert!((theta_apply(&ops, &fb, lam, &v) - expected).amax() < 1e-14);
    }

    #[test]
    fn resolvent_output_satisfies_trace_condition() {
        let (ops, fb) = setup(10);
        let f1 = ops.interpolate(|x| 3.0 * x[0] * x[1]);
        let f2 = ops.interpolate(|x| 20.0 * (x[0] - 0.3).sin());
        let cfg = SolverConfig::default();
        let (x, stats) = solve_resolvent(&ops, &fb, &cfg, 4.0, &f1, &f2).unwrap();
        assert!(stats.residual <= cfg.tol);
        let trace_gap = (ops.trace(&x.u) - fb.feedback_trace(&ops, &x.v)).amax();
        assert!(trace_gap < 1e-8, "trace gap {trace_gap}");
        assert!(apply_generator(&ops, &fb, &x).is_ok());
    }

    #[test]
    fn fixed_point_matches_newton() {
        let (ops, fb) = setup(8);
        let f1 = ops.interpolate(|x| 2.0 * x[0]);
        let f2 = ops.interpolate(|x| 40.0 * x[1] * (1.0 - x[0]));
        let newton = SolverConfig::default();
        let fixed = SolverConfig { method: SolverMethod::FixedPoint, max_iter: 20_000, ..SolverConfig::default() };
        let (a, _) = solve_resolvent(&ops, &fb, &newton, 5.0, &f1, &f2).unwrap();
        let (b, stats) = solve_resolvent(&ops, &fb, &fixed, 5.0, &f1, &f2).unwrap();
        assert!(stats.iterations > 0);
        assert!((a.v - b.v).amax() < 1e-7);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let (ops, fb) = setup(8);
        let f1 = ops.interpolate(|x| 2.0 * x[0]);
        let f2 = ops.interpolate(|x| 40.0 * x[1] * (1.0 - x[0]));
        let cfg = SolverConfig { method: SolverMethod::FixedPoint, max_iter: 1, acceleration: false, ..Default::default() };
        assert!(matches!(
            solve_resolvent(&ops, &fb, &cfg, 5.0, &f1, &f2),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn generator_rejects_states_outside_domain() {
        let (ops, fb) = setup(6);
        let x = State::new(DVector::from_element(ops.num_nodes(), 1.0), DVector::zeros(ops.num_nodes()));
        assert!(matches!(apply_generator(&ops, &fb, &x), Err(Error::Precondition { .. })));
    }

    #[test]
    fn strong_data_with_zero_velocity_has_zero_trace() {
        let (ops, fb) = setup(6);
        let w = ops.interpolate(|x| 1.0 + x[0]);
        let x = make_strong_data(&ops, &fb, &w, &DVector::zeros(ops.num_nodes()));
        assert_eq!(ops.trace(&x.u).amax(), 0.0);
        for &i in ops.interior() {
            assert_eq!(x.u[i], w[i]);
        }
    }

    #[test]
    fn random_strong_data_is_seeded_and_in_domain() {
        let (ops, fb) = setup(8);
        let a = random_strong_data(&ops, &fb, 7, 2.0);
        assert_eq!(a, random_strong_data(&ops, &fb, 7, 2.0));
        assert_ne!(a, random_strong_data(&ops, &fb, 8, 2.0));
        assert!(apply_generator(&ops, &fb, &a).is_ok());
    }

    #[test]
    fn solver_config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { relaxation: 1.5, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { max_iter: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (ops, _) = setup(4);
        let x = State::new(ops.interpolate(|p| p[0]), ops.interpolate(|p| p[1].sin()));
        let c = Checkpoint::new(1.25, &x, "abc");
        let text = serde_json::to_string(&c).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.state().unwrap(), x);
        assert_eq!(back.t, 1.25);
    }
}
