//! Unicycle dynamics and the one-step safety-constrained controller.

mod nlp;
pub mod solver;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{BarrierContext, CbfConfig, CbfError};
use crate::geometry::{wrap_angle, Configuration, RobotShape};
use crate::net::ClearanceModel;

pub use nlp::NlpProblem;
pub use solver::{NonFiniteEvaluation, Residuals, SolveStatus, SolverConfig};

/// Starting point for the next step's solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmStart {
    /// Decision vector `[u1, u2, ω…]`.
    pub z: Vec<f64>,
    pub multipliers: Vec<f64>,
}

/// Paper sampling period in seconds.
pub const DEFAULT_DT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.x, self.y, self.theta)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.theta, self.v]
    }
}

/// Angular velocity `u1` (rad/s) and linear acceleration `u2` (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub u1: f64,
    pub u2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub state_lower: [f64; 4],
    pub state_upper: [f64; 4],
    pub input_lower: [f64; 2],
    pub input_upper: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Self { state_lower: [-5.0; 4], state_upper: [5.0; 4], input_lower: [-10.0; 2], input_upper: [10.0; 2] }
    }
}

/// Diagonal weights and references of the step cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub q: [f64; 4],
    pub p: [f64; 4],
    pub r: [f64; 2],
    pub s: Vec<f64>,
    pub lambda: f64,
    pub u_ref: [f64; 2],
    pub omega_ref: Vec<f64>,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q: [100.0; 4],
            p: [100.0; 4],
            r: [1.0; 2],
            s: vec![100.0; 2],
            lambda: 1000.0,
            u_ref: [0.0; 2],
            omega_ref: vec![1.0; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub dt: f64,
    pub weights: CostWeights,
    pub bounds: Bounds,
    pub cbf: CbfConfig,
    pub solver: SolverConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            weights: CostWeights::default(),
            bounds: Bounds::default(),
            cbf: CbfConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error("{source} (state {state:?})")]
    NonFinite { source: NonFiniteEvaluation, state: State },
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        self.cbf.validate()?;
        let m = self.cbf.order();
        let w = &self.weights;
        if w.s.len() != m || w.omega_ref.len() != m {
            return Err(ControlError::Config(format!("s and omega_ref need {m} entries (one per order)")));
        }
        let diag_ok = w.q.iter().chain(&w.p).chain(&w.r).chain(&w.s).all(|&d| d >= 0.0);
        if !diag_ok || !(w.lambda >= 0.0) {
            return Err(ControlError::Config("weights must be non-negative".into()));
        }
        let b = &self.bounds;
        let ordered = b.state_lower.iter().zip(&b.state_upper).chain(b.input_lower.iter().zip(&b.input_upper));
        if ordered.into_iter().any(|(l, h)| !(l <= h)) {
            return Err(ControlError::Config("bounds need lower <= upper".into()));
        }
        if !(self.dt > 0.0) {
            return Err(ControlError::Config("dt must be positive".into()));
        }
        Ok(())
    }
}

/// One step of the discrete unicycle; the heading is wrapped to `(−π, π]`.
pub fn step_dynamics(s: &State, u: &Control, dt: f64) -> State {
    let mut next = step_unwrapped(s, u, dt);
    next.theta = wrap_angle(next.theta);
    next
}

pub(crate) fn step_unwrapped(s: &State, u: &Control, dt: f64) -> State {
    let (sin, cos) = s.theta.sin_cos();
    State {
        x: s.x + s.v * cos * dt,
        y: s.y + s.v * sin * dt,
        theta: s.theta + u.u1 * dt,
        v: s.v + u.u2 * dt,
    }
}

/// Zero-input step.
pub fn drift(s: &State, dt: f64) -> State {
    step_dynamics(s, &Control::default(), dt)
}

/// Result of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub u_star: Control,
    pub omega_star: Vec<f64>,
    /// `step_dynamics(s_t, u_star)`.
    pub next: State,
    /// Full step cost including the terms that do not depend on the decision.
    pub cost: f64,
    /// `[ψ₁ … ψ_m, state-box terms]`, each required `≥ 0`.
    pub constraints: Vec<f64>,
    pub residuals: Residuals,
    pub status: SolveStatus,
    pub solve_time: Duration,
    /// Predicted clearance at `s_t` (the LSB radius).
    pub d_tilde: f64,
    pub evaluations: usize,
    pub multipliers: Vec<f64>,
}

impl StepSolution {
    /// Decision vector `[u1, u2, ω…]`, for warm starts.
    pub fn decision(&self) -> Vec<f64> {
        let mut z = vec![self.u_star.u1, self.u_star.u2];
        z.extend_from_slice(&self.omega_star);
        z
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart { z: self.decision(), multipliers: self.multipliers.clone() }
    }
}

/// Builds the barrier context at `s_t`, solves the step problem and applies the input.
///
/// `target` is the reference state `x_T`; its heading is taken modulo 2π.
pub fn control_step(
    s_t: &State,
    target: &State,
    model: &ClearanceModel,
    shape: &RobotShape,
    cfg: &ControllerConfig,
    warm: Option<&WarmStart>,
) -> Result<StepSolution, ControlError> {
    let started = std::time::Instant::now();
    let d_tilde = model.predict(s_t.x, s_t.y, s_t.theta);
    if !d_tilde.is_finite() {
        let source = NonFiniteEvaluation { what: "clearance prediction", z: vec![] };
        return Err(ControlError::NonFinite { source, state: *s_t });
    }
    let ctx = BarrierContext::new(shape, &s_t.configuration(), d_tilde);
    let problem = NlpProblem::new(*s_t, *target, ctx, model, shape.extreme_offset(), cfg);
    let default_warm = problem.reference_decision();
    let (z0, mu0) = match warm {
        Some(w) if w.z.len() == default_warm.len() => (&w.z[..], Some(&w.multipliers[..])),
        _ => (&default_warm[..], None),
    };
    let sol = solver::solve_with_multipliers(&problem, z0, mu0, &cfg.solver)
        .map_err(|source| ControlError::NonFinite { source, state: *s_t })?;
    let u_star = Control { u1: sol.z[0], u2: sol.z[1] };
    Ok(StepSolution {
        u_star,
        omega_star: sol.z[2..].to_vec(),
        next: step_dynamics(s_t, &u_star, cfg.dt),
        cost: sol.eval.f + problem.constant_cost(),
        constraints: sol.eval.g.clone(),
        residuals: sol.residuals,
        status: sol.status,
        solve_time: started.elapsed(),
        d_tilde,
        evaluations: sol.evaluations,
        multipliers: sol.multipliers,
    })
}
