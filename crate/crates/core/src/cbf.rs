//! Discrete-time high-order control barrier functions built on local safety balls.
//!
//! The candidate barrier at step `t` is
//! `ψ₀(x) = d̃_t − ‖r_c(x) − r_{c,t}‖`, where `d̃_t` is the predicted clearance and
//! `r_{c,t}` the extreme-point anchor, both frozen at `x_t`. The relaxed chain is
//!
//! ```text
//! ψ_i(x_t) = ψ_{i−1}(x_{t+1}) + a_i ψ_{i−1}(x_t),    a_i = ω_i (γ_i − 1)
//! ```
//!
//! Writing `E` for the one-step shift, `ψ_i(x_t) = [∏_{j≤i} (E + a_j)] ψ₀ (x_t)`,
//! so `ψ_i(x_t) = Σ_k c_{i,k} ψ₀(x_{t+k})` where `c_{i,·}` are the coefficients
//! of the polynomial `∏_{j≤i} (s + a_j)` in ascending powers of `s`.

use thiserror::Error;

use crate::geometry::{extreme_point, Configuration, RobotShape, Vec2};

/// Guard inside the square root of the smoothed distance term.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbfError {
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("gamma {0} outside (0, 1]")]
    BadGamma(f64),
    #[error("slack bounds [{0}, {1}] invalid")]
    BadSlackBounds(f64, f64),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfConfig {
    /// One decay rate per order; the order `m` is the length.
    pub gammas: Vec<f64>,
    pub slack_min: f64,
    pub slack_max: f64,
}

impl Default for CbfConfig {
    fn default() -> Self {
        Self { gammas: vec![0.1, 0.1], slack_min: 0.0, slack_max: 1.0 }
    }
}

impl CbfConfig {
    pub fn order(&self) -> usize {
        self.gammas.len()
    }

    pub fn validate(&self) -> Result<(), CbfError> {
        if self.gammas.is_empty() {
            return Err(CbfError::ZeroOrder);
        }
        if let Some(&g) = self.gammas.iter().find(|&&g| !(g > 0.0 && g <= 1.0)) {
            return Err(CbfError::BadGamma(g));
        }
        if !(self.slack_min >= 0.0 && self.slack_min <= self.slack_max) {
            return Err(CbfError::BadSlackBounds(self.slack_min, self.slack_max));
        }
        Ok(())
    }
}

/// LSB frozen at the current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierContext {
    pub d_tilde_t: f64,
    pub r_c_t: Vec2,
}

impl BarrierContext {
    pub fn new(shape: &RobotShape, cfg: &Configuration, d_tilde_t: f64) -> Self {
        Self { d_tilde_t, r_c_t: extreme_point(shape, cfg) }
    }
}

/// Exact-norm barrier value at `cfg`.
pub fn psi0(cfg: &Configuration, ctx: &BarrierContext, shape: &RobotShape) -> f64 {
    ctx.d_tilde_t - extreme_point(shape, cfg).dist(ctx.r_c_t)
}

/// Smoothed barrier at `(x, y, θ)` for a body-frame anchor `offset`, with its gradient.
pub fn psi0_smooth(x: f64, y: f64, theta: f64, offset: Vec2, ctx: &BarrierContext) -> (f64, [f64; 3]) {
    let (s, c) = theta.sin_cos();
    let dx = x + c * offset.x - s * offset.y - ctx.r_c_t.x;
    let dy = y + s * offset.x + c * offset.y - ctx.r_c_t.y;
    let n = (NORM_GUARD + dx * dx + dy * dy).sqrt();
    // d r_c / dθ
    let tx = -s * offset.x - c * offset.y;
    let ty = c * offset.x - s * offset.y;
    (ctx.d_tilde_t - n, [-dx / n, -dy / n, -(dx * tx + dy * ty) / n])
}

/// Ascending coefficients of `∏_{j≤i} (s + a_j)` for `i = 1..=a.len()`.
pub fn chain_coefficients(a: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(a.len());
    let mut poly = vec![1.0];
    for &aj in a {
        let mut next = vec![0.0; poly.len() + 1];
        for (k, &p) in poly.iter().enumerate() {
            next[k] += aj * p;
            next[k + 1] += p;
        }
        out.push(next.clone());
        poly = next;
    }
    out
}

/// `[ψ₁(x_t), …, ψ_m(x_t)]` from `psi0 = [ψ₀(x_t), …, ψ₀(x_{t+m})]`.
pub fn relaxed_psi_chain(psi0: &[f64], gammas: &[f64], omegas: &[f64]) -> Vec<f64> {
    relaxed_psi_chain_with_grad(psi0, gammas, omegas).values
}

/// Chain values with partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGrad {
    pub values: Vec<f64>,
    /// `d_psi0[i][k] = ∂ψ_{i+1}(x_t) / ∂ψ₀(x_{t+k})`.
    pub d_psi0: Vec<Vec<f64>>,
    /// `d_omega[i][j] = ∂ψ_{i+1}(x_t) / ∂ω_{j+1}`.
    pub d_omega: Vec<Vec<f64>>,
}

/// Table recursion `T_i[k] = T_{i−1}[k+1] + a_i T_{i−1}[k]` carried in forward mode.
pub fn relaxed_psi_chain_with_grad(psi0: &[f64], gammas: &[f64], omegas: &[f64]) -> ChainGrad {
    let m = gammas.len();
    assert_eq!(omegas.len(), m, "one slack per order");
    assert!(psi0.len() > m, "need ψ₀ at x_t..x_{{t+m}}");
    let np = m + 1;
    // Each entry: (value, ∂/∂ψ₀[0..=m], ∂/∂ω[0..m]).
    let mut row: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..np)
        .map(|k| {
            let mut dp = vec![0.0; np];
            dp[k] = 1.0;
            (psi0[k], dp, vec![0.0; m])
        })
        .collect();
    let mut out = ChainGrad { values: Vec::new(), d_psi0: Vec::new(), d_omega: Vec::new() };
    for i in 0..m {
        let a = omegas[i] * (gammas[i] - 1.0);
        let next: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..row.len() - 1)
            .map(|k| {
                let (lo, hi) = (&row[k], &row[k + 1]);
                let dp = hi.1.iter().zip(&lo.1).map(|(h, l)| h + a * l).collect();
                let mut dw: Vec<f64> = hi.2.iter().zip(&lo.2).map(|(h, l)| h + a * l).collect();
                dw[i] += (gammas[i] - 1.0) * lo.0;
                (hi.0 + a * lo.0, dp, dw)
            })
            .collect();
        out.values.push(next[0].0);
        out.d_psi0.push(next[0].1.clone());
        out.d_omega.push(next[0].2.clone());
        row = next;
    }
    out
}

/// Whether every relaxed constraint `ψ_i(x_t) ≥ −tol` holds for `i = 0..=m`.
pub fn relaxed_constraints_hold(psi0: &[f64], gammas: &[f64], omegas: &[f64], tol: f64) -> bool {
    psi0[0] >= -tol && relaxed_psi_chain(psi0, gammas, omegas).iter().all(|&v| v >= -tol)
}

/// True iff `ψ₀ ≥ −tol` at every index of the rollout `x_t..x_{t+m}` (vacuous when empty).
///
/// When `ψ₀(x_t) ≥ 0`, `ω ≥ 0`, `γ ∈ (0, 1]` and every relaxed constraint holds,
/// each level gives `ψ_{i−1}(x_{t+1}) ≥ ω_i (1 − γ_i) ψ_{i−1}(x_t) ≥ 0`; descending
/// the levels yields `ψ₀(x_{t+k}) ≥ 0` for `k = 1..=m`.
pub fn verify_invariance(psi0: &[f64], tol: f64) -> bool {
    psi0.iter().all(|&v| v >= -tol)
}
