//! Post-processing of trajectories: the `p`-variable, the multiplier
//! identity, decay fits, the Komornik lemma check and the bound monitor.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::elliptic::DiscreteOperators;
use crate::error::{invalid, Result};
use crate::feedback::BoundaryFeedback;
use crate::mesh::{Point, Region};
use crate::stepper::{dissipation, energy, State, StepRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub state: State,
}

/// Step records of one run plus the stored state snapshots.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl Trace {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return invalid("record times are not strictly increasing");
        }
        if self.records.iter().any(|r| !(r.energy >= 0.0)) {
            return invalid("negative or undefined energy in trace");
        }
        if self.snapshots.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return invalid("snapshot times are not strictly increasing");
        }
        Ok(())
    }
}

/// `p = A⁻¹v`.
pub fn p_reconstruct(ops: &DiscreteOperators, v: &DVector<f64>) -> DVector<f64> {
    ops.solve_a(v)
}

/// `‖u^{n+½} + (p^{n+1} - p^n)/Δt + Φ^{n+½}‖` for each pair of consecutive
/// snapshots, relative to the largest `‖u^{n+½}‖` over the segment.
pub fn p_phi_identity_residual(
    ops: &DiscreteOperators,
    fb: &BoundaryFeedback,
    snapshots: &[Snapshot],
) -> Result<Vec<f64>> {
    if snapshots.len() < 2 {
        return invalid("at least two snapshots are required");
    }
    let (gaps, scales): (Vec<f64>, Vec<f64>) = snapshots
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let dt = b.t - a.t;
            let u_mid = (&a.state.u + &b.state.u) * 0.5;
            let phi_mid = (fb.phi(ops, &a.state.v) + fb.phi(ops, &b.state.v)) * 0.5;
            let dp = (p_reconstruct(ops, &b.state.v) - p_reconstruct(ops, &a.state.v)) / dt;
            (ops.l2_norm(&(&u_mid + dp + phi_mid)), ops.l2_norm(&u_mid))
        })
        .unzip();
    let scale = scales.into_iter().fold(0.0, f64::max);
    Ok(gaps.into_iter().map(|g| if scale > 0.0 { g / scale } else { g }).collect())
}

/// `|∫|p′|² - ∫(|u|² + 2Φu + |Φ|²)|` relative to the left side, per snapshot
/// interval, using the difference quotient for `p′` and midpoint `u`, `Φ`.
pub fn p_prime_identity_residual(
    ops: &DiscreteOperators,
    fb: &BoundaryFeedback,
    snapshots: &[Snapshot],
) -> Result<Vec<f64>> {
    if snapshots.len() < 2 {
        return invalid("at least two snapshots are required");
    }
    Ok(snapshots
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let dt = b.t - a.t;
            let u = (&a.state.u + &b.state.u) * 0.5;
            let phi = (fb.phi(ops, &a.state.v) + fb.phi(ops, &b.state.v)) * 0.5;
            let dp = (p_reconstruct(ops, &b.state.v) - p_reconstruct(ops, &a.state.v)) / dt;
            let lhs = ops.l2_inner(&dp, &dp);
            let rhs = ops.l2_inner(&u, &u) + 2.0 * ops.l2_inner(&phi, &u) + ops.l2_inner(&phi, &phi);
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
        })
        .collect())
}

/// `2(x - x₀)·∇p + p`, with nodal gradients recovered by area averaging.
pub fn multiplier_apply(ops: &DiscreteOperators, x0: Point, p: &DVector<f64>) -> DVector<f64> {
    let grads = ops.nodal_gradients(p);
    let nodes = ops.mesh().nodes();
    DVector::from_fn(p.len(), |i, _| {
        let h = [nodes[i][0] - x0[0], nodes[i][1] - x0[1]];
        2.0 * (h[0] * grads[i][0] + h[1] * grads[i][1]) + p[i]
    })
}

/// Separate terms of the multiplier identity over `[τ₁, τ₂]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierReport {
    pub tau1: f64,
    pub tau2: f64,
    pub r: f64,
    pub snapshots_used: usize,
    pub lhs: f64,
    pub bracket: f64,
    pub boundary: f64,
    pub volume: f64,
    pub energy_derivative: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Integrand values at one snapshot.
struct MultiplierSample {
    t: f64,
    energy: f64,
    /// `E′ = -dissipation`.
    energy_rate: f64,
    u_mp: f64,
    boundary: f64,
    volume: f64,
}

fn multiplier_sample(ops: &DiscreteOperators, fb: &BoundaryFeedback, x0: Point, s: &Snapshot) -> Result<MultiplierSample> {
    let mesh = ops.mesh();
    let State { u, v } = &s.state;
    let p = p_reconstruct(ops, v);
    let mp = multiplier_apply(ops, x0, &p);
    let dnp = ops.normal_derivative(&p)?;
    let gb = fb.project_feedback(&ops.dstar(v));

    let mut boundary = 0.0;
    for e in mesh.boundary_edges() {
        let [a, b] = e.nodes;
        let mid = mesh.edge_midpoint(e);
        let h_nu = (mid[0] - x0[0]) * e.normal[0] + (mid[1] - x0[1]) * e.normal[1];
        let len = mesh.edge_length(e);
        let ia = ops.boundary_index(a).expect("edge node on boundary");
        let ib = ops.boundary_index(b).expect("edge node on boundary");
        boundary += h_nu * len * 0.5 * (dnp[ia].powi(2) + dnp[ib].powi(2));
        if e.region == Region::Actuated {
            boundary -= h_nu * len * 0.5 * (gb[ia].powi(2) + gb[ib].powi(2));
        }
    }

    let phi = fb.phi(ops, v);
    let grads = ops.nodal_gradients(u);
    let nodes = mesh.nodes();
    let weight = DVector::from_fn(u.len(), |i, _| {
        let h = [nodes[i][0] - x0[0], nodes[i][1] - x0[1]];
        3.0 * u[i] + 2.0 * (h[0] * grads[i][0] + h[1] * grads[i][1])
    });

    Ok(MultiplierSample {
        t: s.t,
        energy: energy(ops, &s.state)?,
        energy_rate: -dissipation(ops, fb, v),
        u_mp: ops.l2_inner(u, &mp),
        boundary,
        volume: ops.l2_inner(&phi, &weight),
    })
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1])).sum()
}

/// `|LHS - RHS| / (|LHS| + |RHS| + ε)` for the weighted multiplier identity,
/// using the snapshots whose times lie in `[τ₁, τ₂]`.
pub fn multiplier_identity_residual(
    ops: &DiscreteOperators,
    fb: &BoundaryFeedback,
    snapshots: &[Snapshot],
    tau1: f64,
    tau2: f64,
    r: f64,
    x0: Point,
) -> Result<MultiplierReport> {
    if !(r >= 2.0) {
        return invalid(format!("multiplier exponent r must be at least 2, got {r}"));
    }
    if !(tau2 > tau1) {
        return invalid(format!("empty multiplier window [{tau1}, {tau2}]"));
    }
    let used: Vec<&Snapshot> = snapshots.iter().filter(|s| s.t >= tau1 && s.t <= tau2).collect();
    if used.len() < 2 {
        return invalid(format!("fewer than two snapshots in [{tau1}, {tau2}]"));
    }
    let samples = used.iter().map(|s| multiplier_sample(ops, fb, x0, s)).collect::<Result<Vec<_>>>()?;

    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let pow = |e: f64, k: f64| if e > 0.0 { e.powf(k) } else { 0.0 };
    let integrate = |f: &dyn Fn(&MultiplierSample) -> f64| trapezoid(&t, &samples.iter().map(f).collect::<Vec<_>>());

    let a = (r - 1.0) / 2.0;
    let lhs = 2.0 * integrate(&|s| pow(s.energy, (r + 1.0) / 2.0));
    let first = &samples[0];
    let last = &samples[samples.len() - 1];
    let bracket = pow(last.energy, a) * last.u_mp - pow(first.energy, a) * first.u_mp;
    let boundary = integrate(&|s| pow(s.energy, a) * s.boundary);
    let volume = -integrate(&|s| pow(s.energy, a) * s.volume);
    let energy_derivative = -a * integrate(&|s| s.energy_rate * pow(s.energy, (r - 3.0) / 2.0) * s.u_mp);
    let rhs = bracket + boundary + volume + energy_derivative;

    let residual = (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + 1e-300);
    Ok(MultiplierReport {
        tau1,
        tau2,
        r,
        snapshots_used: samples.len(),
        lhs,
        bracket,
        boundary,
        volume,
        energy_derivative,
        rhs,
        residual,
    })
}

/// Least-squares power law `E ≈ c t^{-alpha}` in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub alpha: f64,
    pub c: f64,
    pub window: (f64, f64),
    /// Root-mean-square misfit in `log E`.
    pub residual: f64,
    pub samples: usize,
    /// Set when the fitted exponent is indistinguishable from zero.
    pub no_decay: bool,
}

/// Exponents at or below this count as no decay.
pub const NO_DECAY_ALPHA: f64 = 1e-3;

pub fn fit_decay(times: &[f64], energies: &[f64], window: Option<(f64, f64)>) -> Result<DecayFit> {
    if times.len() != energies.len() {
        return invalid("times and energies differ in length");
    }
    if times.is_empty() {
        return invalid("empty trace");
    }
    let (t0, t1) = window.unwrap_or((f64::MIN_POSITIVE, times[times.len() - 1]));
    if !(t1 > t0) {
        return invalid(format!("empty fit window [{t0}, {t1}]"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&t, &e) in times.iter().zip(energies) {
        if t < t0 || t > t1 || t <= 0.0 {
            continue;
        }
        if !(e > 0.0) {
            return invalid(format!("nonpositive energy {e} at t = {t} inside the fit window"));
        }
        xs.push(t.ln());
        ys.push(e.ln());
        lo = lo.min(t);
        hi = hi.max(t);
    }
    let n = xs.len();
    if n < 10 {
        return invalid(format!("fit window holds {n} samples, need at least 10"));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / nf).sqrt();
    let alpha = -slope;
    Ok(DecayFit { alpha, c: intercept.exp(), window: (lo, hi), residual, samples: n, no_decay: alpha <= NO_DECAY_ALPHA })
}

/// Outcome of checking the Komornik integral inequality on samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KomornikReport {
    pub gamma: f64,
    /// `sup_τ ∫_τ^∞ E^{γ+1} / (E(0)^γ E(τ))`, tail included.
    pub t_estimate: f64,
    /// Power-law exponent of the tail model fitted on the last quarter.
    pub tail_exponent: f64,
    pub tail_model: String,
    /// Set when the tail integral diverges, i.e. the hypothesis fails.
    pub unbounded: bool,
    pub hypothesis_holds: bool,
    pub conclusion_holds: bool,
    /// Samples at `t ≥ T` where the conclusion was evaluated.
    pub conclusion_samples: usize,
}

pub const KOMORNIK_TAIL_MODEL: &str = "power_law_last_quarter";

pub fn komornik_check(times: &[f64], values: &[f64], gamma: f64) -> Result<KomornikReport> {
    if times.len() != values.len() || times.len() < 8 {
        return invalid("komornik_check needs at least 8 paired samples");
    }
    if !(gamma > 0.0) {
        return invalid(format!("gamma must be positive, got {gamma}"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("sample times are not strictly increasing");
    }
    let e0 = values[0];
    if values.iter().any(|&e| !(e >= 0.0)) {
        return invalid("samples must be nonnegative");
    }
    let slack = 1e-10 * e0.max(1.0);
    if values.windows(2).any(|w| w[1] > w[0] + slack) {
        return invalid("samples are not nonincreasing");
    }
    let n = times.len();
    let t_max = times[n - 1];
    let e_last = values[n - 1];

    // Power law `E ≈ E_last (t/t_max)^{-a}` from the last quarter.
    let start = n - n / 4;
    let pairs: Vec<(f64, f64)> = (start..n)
        .filter(|&i| times[i] > 0.0 && values[i] > 0.0)
        .map(|i| (times[i].ln(), values[i].ln()))
        .collect();
    let tail_exponent = if pairs.len() >= 2 {
        let m = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            -sxy / sxx
        } else {
            0.0
        }
    } else {
        f64::INFINITY
    };
    let q = gamma + 1.0;
    let (tail, unbounded) = if e_last == 0.0 {
        (0.0, false)
    } else if tail_exponent * q > 1.0 {
        (e_last.powf(q) * t_max / (tail_exponent * q - 1.0), false)
    } else {
        (f64::INFINITY, true)
    };

    let mut integral = vec![0.0; n];
    integral[n - 1] = tail;
    for i in (0..n - 1).rev() {
        let seg = 0.5 * (times[i + 1] - times[i]) * (values[i].powf(q) + values[i + 1].powf(q));
        integral[i] = integral[i + 1] + seg;
    }

    let scale = e0.powf(gamma);
    let mut t_estimate = 0.0f64;
    let mut finite_part = 0.0f64;
    for i in 0..n {
        if values[i] > 0.0 {
            t_estimate = t_estimate.max(integral[i] / (scale * values[i]));
            finite_part = finite_part.max((integral[i] - tail) / (scale * values[i]));
        }
    }
    if unbounded {
        t_estimate = finite_part;
    }

    let hypothesis_holds = !unbounded && t_estimate.is_finite();
    let mut conclusion_samples = 0;
    let mut conclusion_holds = hypothesis_holds;
    if hypothesis_holds {
        let tt = t_estimate;
        for (&t, &e) in times.iter().zip(values) {
            if t < tt {
                continue;
            }
            conclusion_samples += 1;
            let bound = if tt > 0.0 { e0 * ((tt + gamma * t) / (tt + gamma * tt)).powf(-1.0 / gamma) } else { 0.0 };
            if e > bound * (1.0 + 1e-9) + 1e-300 {
                conclusion_holds = false;
            }
        }
    }

    Ok(KomornikReport {
        gamma,
        t_estimate,
        tail_exponent,
        tail_model: KOMORNIK_TAIL_MODEL.to_string(),
        unbounded,
        hypothesis_holds,
        conclusion_holds,
        conclusion_samples,
    })
}

/// Statistics of `t^{2/(r-1)} E(t)` past an initial transient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundMonitor {
    pub r: f64,
    pub exponent: f64,
    pub t0: f64,
    pub t_end: f64,
    pub max: f64,
    pub max_second_quarter: f64,
    pub max_last_quarter: f64,
    pub ratio: f64,
    /// `(t, t^{exponent} E(t))` for every sample with `t ≥ t0`.
    #[serde(skip)]
    pub series: Vec<(f64, f64)>,
}

/// `t0` defaults to `t_end / 10`; the window must span at least one decade.
pub fn polynomial_bound_monitor(times: &[f64], energies: &[f64], r: f64, t0: Option<f64>) -> Result<BoundMonitor> {
    if !(r >= 2.0) {
        return invalid(format!("bound monitor exponent r must be at least 2, got {r}"));
    }
    if times.len() != energies.len() || times.is_empty() {
        return invalid("times and energies must be nonempty and paired");
    }
    let t_end = times[times.len() - 1];
    let t0 = t0.unwrap_or(t_end / 10.0);
    if !(t0 > 0.0) || t_end < 10.0 * t0 * (1.0 - 1e-12) {
        return invalid(format!("monitor window [{t0}, {t_end}] spans less than one decade"));
    }
    let exponent = 2.0 / (r - 1.0);
    let series: Vec<(f64, f64)> =
        times.iter().zip(energies).filter(|(&t, _)| t >= t0).map(|(&t, &e)| (t, t.powf(exponent) * e)).collect();
    let quarter = (t_end - t0) / 4.0;
    let max_in = |a: f64, b: f64| series.iter().filter(|(t, _)| *t >= a && *t <= b).map(|p| p.1).fold(f64::NAN, f64::max);
    let max_second_quarter = max_in(t0 + quarter, t0 + 2.0 * quarter);
    let max_last_quarter = max_in(t0 + 3.0 * quarter, t_end);
    if max_second_quarter.is_nan() || max_last_quarter.is_nan() {
        return invalid("a monitor quarter holds no samples");
    }
    let ratio = if max_second_quarter > 0.0 {
        max_last_quarter / max_second_quarter
    } else if max_last_quarter > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(BoundMonitor {
        r,
        exponent,
        t0,
        t_end,
        max: series.iter().map(|p| p.1).fold(0.0, f64::max),
        max_second_quarter,
        max_last_quarter,
        ratio,
        series,
    })
}
