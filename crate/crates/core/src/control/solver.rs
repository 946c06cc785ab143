//! Projected augmented-Lagrangian solver for small dense problems
//!
//! ```text
//! min f(z)   s.t.  g_j(z) ≥ 0,   lo ≤ z ≤ hi
//! ```
//!
//! Inequalities enter through the PHR augmented Lagrangian
//! `L(z) = f(z) + (1/2ρ) Σ_j [max(0, μ_j − ρ g_j(z))² − μ_j²]`; the box is kept by
//! projection. Each outer iteration minimizes `L` with a projected BFGS method
//! (Armijo backtracking along the projected path), then updates
//! `μ_j ← max(0, μ_j − ρ g_j)` and raises `ρ` when `max_j |min(g_j, μ_j/ρ)|`
//! stops shrinking.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("non-finite {what} at z = {z:?}")]
pub struct NonFiniteEvaluation {
    pub what: &'static str,
    pub z: Vec<f64>,
}

/// Cost, constraints and their first derivatives at one point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub grad: Vec<f64>,
    pub g: Vec<f64>,
    /// `jac[j]` is the gradient of `g[j]`.
    pub jac: Vec<Vec<f64>>,
}

impl Evaluation {
    fn check(&self, z: &[f64]) -> Result<(), NonFiniteEvaluation> {
        let bad = |what| Err(NonFiniteEvaluation { what, z: z.to_vec() });
        if !self.f.is_finite() || !self.grad.iter().all(|v| v.is_finite()) {
            return bad("cost");
        }
        if !self.g.iter().all(|v| v.is_finite()) || !self.jac.iter().flatten().all(|v| v.is_finite()) {
            return bad("constraint");
        }
        Ok(())
    }

    fn violation(&self) -> f64 {
        self.g.iter().fold(0.0f64, |m, &g| m.max(-g))
    }

    fn min_constraint(&self) -> f64 {
        self.g.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub trait Problem {
    fn dim(&self) -> usize;
    fn n_constraints(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn evaluate(&self, z: &[f64]) -> Evaluation;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Threshold on the KKT residual for `Optimal`.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho_init: f64,
    pub rho_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_outer: 40, max_inner: 200, rho_init: 100.0, rho_max: 1e10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleFallback,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleFallback => "infeasible_fallback",
        }
    }
}

/// Components of the KKT residual at a returned point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    /// `‖z − P(z − ∇_z ℒ)‖∞ / max(1, ‖∇f‖∞)` for the Lagrangian `ℒ = f − μᵀg`.
    pub stationarity: f64,
    /// `max_j max(0, −g_j)`.
    pub violation: f64,
    /// `max_j |min(μ_j, g_j)|`.
    pub complementarity: f64,
}

impl Residuals {
    pub fn kkt(&self) -> f64 {
        self.stationarity.max(self.violation).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub z: Vec<f64>,
    pub eval: Evaluation,
    pub multipliers: Vec<f64>,
    pub residuals: Residuals,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub evaluations: usize,
    pub solve_time: Duration,
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in z.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `‖z − P(z − d)‖∞`.
fn projected_step_norm(z: &[f64], d: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    z.iter()
        .zip(d)
        .zip(lo.iter().zip(hi))
        .map(|((&zi, &di), (&l, &h))| (zi - (zi - di).clamp(l, h)).abs())
        .fold(0.0, f64::max)
}

/// Residuals of the point `ev` with multipliers `mu`.
pub fn kkt_residuals(z: &[f64], ev: &Evaluation, mu: &[f64], lo: &[f64], hi: &[f64]) -> Residuals {
    let mut gl = ev.grad.clone();
    for (j, &m) in mu.iter().enumerate() {
        for (k, d) in gl.iter_mut().enumerate() {
            *d -= m * ev.jac[j][k];
        }
    }
    let stationarity = projected_step_norm(z, &gl, lo, hi) / inf_norm(&ev.grad).max(1.0);
    let complementarity = mu.iter().zip(&ev.g).fold(0.0f64, |m, (&u, &g)| m.max(u.min(g).abs()));
    Residuals { stationarity, violation: ev.violation(), complementarity }
}

struct Counter<'a, P: Problem + ?Sized> {
    problem: &'a P,
    calls: usize,
    /// Feasible point with the lowest cost.
    best_feasible: Option<(Vec<f64>, Evaluation)>,
    /// Point with the largest minimum constraint value.
    safest: Option<(Vec<f64>, Evaluation)>,
    feas_tol: f64,
}

impl<P: Problem + ?Sized> Counter<'_, P> {
    fn eval(&mut self, z: &[f64]) -> Result<Evaluation, NonFiniteEvaluation> {
        self.calls += 1;
        let ev = self.problem.evaluate(z);
        ev.check(z)?;
        if ev.violation() <= self.feas_tol && self.best_feasible.as_ref().is_none_or(|(_, b)| ev.f < b.f) {
            self.best_feasible = Some((z.to_vec(), ev.clone()));
        }
        if self.safest.as_ref().is_none_or(|(_, b)| ev.min_constraint() > b.min_constraint()) {
            self.safest = Some((z.to_vec(), ev.clone()));
        }
        Ok(ev)
    }
}

/// Augmented Lagrangian of the rows `scale_j · g_j` with multipliers `mu` for
/// those scaled rows.
fn lagrangian(ev: &Evaluation, mu: &[f64], rho: f64, scale: &[f64]) -> (f64, Vec<f64>) {
    let mut val = ev.f;
    let mut grad = ev.grad.clone();
    for (j, (&m, &g)) in mu.iter().zip(&ev.g).enumerate() {
        let shifted = (m - rho * scale[j] * g).max(0.0);
        val += (shifted * shifted - m * m) / (2.0 * rho);
        if shifted > 0.0 {
            for (k, d) in grad.iter_mut().enumerate() {
                *d -= shifted * scale[j] * ev.jac[j][k];
            }
        }
    }
    (val, grad)
}

/// Row scales `1/‖∇g_j‖∞`, clamped to `[1e-4, 1e4]`; rows with zero gradient keep 1.
fn row_scales(ev: &Evaluation) -> Vec<f64> {
    ev.jac
        .iter()
        .map(|row| {
            let n = inf_norm(row);
            if n > 0.0 { (1.0 / n).clamp(1e-4, 1e4) } else { 1.0 }
        })
        .collect()
}

/// Projected BFGS on the augmented Lagrangian; returns the final point and evaluation.
fn inner_minimize<P: Problem + ?Sized>(
    counter: &mut Counter<'_, P>,
    mut z: Vec<f64>,
    mut ev: Evaluation,
    mu: &[f64],
    rho: f64,
    scale: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Evaluation), NonFiniteEvaluation> {
    let (lo, hi) = (counter.problem.lower().to_vec(), counter.problem.upper().to_vec());
    let n = z.len();
    let mut h = identity(n);
    let mut fresh = true;
    let (mut val, mut grad) = lagrangian(&ev, mu, rho, scale);
    for _ in 0..max_iter {
        let grad_scale = inf_norm(&ev.grad).max(1.0);
        if projected_step_norm(&z, &grad, &lo, &hi) / grad_scale <= tol {
            break;
        }
        let bound_tol = 1e-12;
        let active: Vec<bool> = (0..n)
            .map(|i| (z[i] <= lo[i] + bound_tol && grad[i] > 0.0) || (z[i] >= hi[i] - bound_tol && grad[i] < 0.0))
            .collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| !active[i]) {
            d[i] = -(0..n).filter(|&k| !active[k]).map(|k| h[i][k] * grad[k]).sum::<f64>();
        }
        if dot(&d, &grad) >= 0.0 {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -grad[i] };
            }
        }
        if fresh {
            // Unscaled steepest descent: keep the first trial step short.
            let len = inf_norm(&d).max(1.0);
            d.iter_mut().for_each(|v| *v /= len);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = z.iter().zip(&d).map(|(zi, di)| zi + alpha * di).collect();
            project(&mut trial, &lo, &hi);
            let step: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            if inf_norm(&step) == 0.0 {
                break;
            }
            let tev = counter.eval(&trial)?;
            let (tval, tgrad) = lagrangian(&tev, mu, rho, scale);
            // Small slack absorbs rounding once the decrease reaches machine precision.
            if tval <= val + 1e-4 * dot(&grad, &step) + 1e-15 * val.abs().max(1.0) {
                accepted = Some((trial, tev, tval, tgrad, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, tev, tval, tgrad, s)) = accepted else { break };
        let y: Vec<f64> = tgrad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().flatten().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        z = trial;
        ev = tev;
        val = tval;
        grad = tgrad;
    }
    Ok((z, ev))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|k| if i == k { 1.0 } else { 0.0 }).collect()).collect()
}

/// Inverse-Hessian update `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for k in 0..n {
            h[i][k] += (1.0 + r * yhy) * r * s[i] * s[k] - r * (hy[i] * s[k] + s[i] * hy[k]);
        }
    }
}

/// Solves `problem` from `warm` (projected onto the box first).
pub fn solve<P: Problem + ?Sized>(
    problem: &P,
    warm: &[f64],
    cfg: &SolverConfig,
) -> Result<Solution, NonFiniteEvaluation> {
    solve_with_multipliers(problem, warm, None, cfg)
}

/// [`solve`] with initial multiplier estimates, e.g. from a previous solve of a
/// nearby problem. Estimates of the wrong length are ignored; negative or
/// non-finite entries start at zero.
pub fn solve_with_multipliers<P: Problem + ?Sized>(
    problem: &P,
    warm: &[f64],
    multipliers: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<Solution, NonFiniteEvaluation> {
    let started = std::time::Instant::now();
    let (lo, hi) = (problem.lower(), problem.upper());
    let mut z = warm.to_vec();
    project(&mut z, lo, hi);
    let mut counter = Counter { problem, calls: 0, best_feasible: None, safest: None, feas_tol: cfg.tol };
    let mut ev = counter.eval(&z)?;
    // Constraints enter scaled so that their gradients have comparable size;
    // `mu` holds the multipliers of the scaled rows.
    let scale = row_scales(&ev);
    let mut mu: Vec<f64> = match multipliers {
        Some(m) if m.len() == problem.n_constraints() => m
            .iter()
            .zip(&scale)
            .map(|(&v, &s)| if v.is_finite() { v.max(0.0) / s } else { 0.0 })
            .collect(),
        _ => vec![0.0; problem.n_constraints()],
    };
    let unscaled = |mu: &[f64]| -> Vec<f64> { mu.iter().zip(&scale).map(|(m, s)| m * s).collect() };
    let mut rho = cfg.rho_init;
    let mut last_progress = f64::INFINITY;
    let mut inner_tol = 1e-3f64.max(cfg.tol);
    for outer in 1..=cfg.max_outer {
        let (zn, evn) = inner_minimize(&mut counter, z, ev, &mu, rho, &scale, inner_tol, cfg.max_inner)?;
        z = zn;
        ev = evn;
        for ((m, &g), &s) in mu.iter_mut().zip(&ev.g).zip(&scale) {
            *m = (*m - rho * s * g).max(0.0);
        }
        let multipliers = unscaled(&mu);
        let residuals = kkt_residuals(&z, &ev, &multipliers, lo, hi);
        if residuals.kkt() <= cfg.tol {
            return Ok(Solution {
                z,
                eval: ev,
                multipliers,
                residuals,
                status: SolveStatus::Optimal,
                outer_iterations: outer,
                evaluations: counter.calls,
                solve_time: started.elapsed(),
            });
        }
        // Joint feasibility/complementarity measure; ρ grows when it stalls.
        let progress = (0..mu.len()).fold(0.0f64, |m, j| m.max((scale[j] * ev.g[j]).min(mu[j] / rho).abs()));
        if progress > 0.25 * last_progress.max(cfg.tol) {
            rho = (rho * 10.0).min(cfg.rho_max);
        }
        last_progress = progress;
        inner_tol = (inner_tol * 0.1).max(0.1 * cfg.tol);
    }
    let (status, (z, ev)) = match (counter.best_feasible.take(), counter.safest.take()) {
        (Some(best), _) => (SolveStatus::MaxIter, best),
        (None, Some(safe)) => (SolveStatus::InfeasibleFallback, safe),
        (None, None) => unreachable!("at least one point is evaluated"),
    };
    let multipliers = unscaled(&mu);
    let residuals = kkt_residuals(&z, &ev, &multipliers, lo, hi);
    Ok(Solution {
        z,
        eval: ev,
        multipliers,
        residuals,
        status,
        outer_iterations: cfg.max_outer,
        evaluations: counter.calls,
        solve_time: started.elapsed(),
    })
}
