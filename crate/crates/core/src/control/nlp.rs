//! The single-shooting step problem.
//!
//! Decision `z = [u1, u2, ω₁ … ω_m]`. With `x_{t+1} = f(x_t, u)` substituted,
//!
//! ```text
//! cost  = ‖x_t − x_T‖²_Q + ‖u − u_r‖²_R + ‖Ω − Ω_r‖²_S + ‖x_{t+1} − x_T‖²_P − λ d̃(x_{t+1})
//! g_i   = ψ_i(x_t)                        i = 1..m   (over x_t, x_{t+1}, drift(x_{t+1}), …)
//! g     = x_{t+1} − x_lo,  x_hi − x_{t+1}             (8 state-box terms)
//! box   : u ∈ [u_lo, u_hi],  ω ∈ [ω_min, ω_max]
//! ```
//!
//! giving `m + 8` inequalities plus `2 (2 + m)` bounds, i.e. `3m + 12` in total.
//! Position terms of `x_{t+1}` and the `Q` term do not depend on `z`; they are
//! kept out of the optimized objective and added back when reporting the cost.

use super::solver::{Evaluation, Problem};
use super::{ControllerConfig, State};
use crate::cbf::{psi0_smooth, relaxed_psi_chain_with_grad, BarrierContext};
use crate::geometry::{wrap_angle, Vec2};
use crate::net::ClearanceModel;

/// State together with its Jacobian with respect to `(u1, u2)`.
#[derive(Clone, Copy)]
struct Tracked {
    s: [f64; 4],
    j: [[f64; 2]; 4],
}

pub struct NlpProblem<'a> {
    state: State,
    /// Reference with the heading unwrapped to within π of `state.theta`.
    target: State,
    ctx: BarrierContext,
    model: &'a ClearanceModel,
    anchor: Vec2,
    cfg: &'a ControllerConfig,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> NlpProblem<'a> {
    pub fn new(
        state: State,
        target: State,
        ctx: BarrierContext,
        model: &'a ClearanceModel,
        anchor: Vec2,
        cfg: &'a ControllerConfig,
    ) -> Self {
        let m = cfg.cbf.order();
        let b = &cfg.bounds;
        let mut lower = b.input_lower.to_vec();
        let mut upper = b.input_upper.to_vec();
        lower.extend(std::iter::repeat_n(cfg.cbf.slack_min, m));
        upper.extend(std::iter::repeat_n(cfg.cbf.slack_max, m));
        let target = State { theta: state.theta + wrap_angle(target.theta - state.theta), ..target };
        Self { state, target, ctx, model, anchor, cfg, lower, upper }
    }

    pub fn target(&self) -> &State {
        &self.target
    }

    /// `[u_r, Ω_r]` projected onto the box.
    pub fn reference_decision(&self) -> Vec<f64> {
        let w = &self.cfg.weights;
        let mut z = w.u_ref.to_vec();
        z.extend_from_slice(&w.omega_ref);
        for ((v, l), h) in z.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *h);
        }
        z
    }

    fn first_step(&self) -> [f64; 2] {
        let dt = self.cfg.dt;
        let s = &self.state;
        [s.x + s.v * s.theta.cos() * dt, s.y + s.v * s.theta.sin() * dt]
    }

    /// Cost terms that do not depend on the decision vector.
    pub fn constant_cost(&self) -> f64 {
        let w = &self.cfg.weights;
        let (s, t) = (self.state.as_array(), self.target.as_array());
        let q: f64 = (0..4).map(|k| w.q[k] * (s[k] - t[k]).powi(2)).sum();
        let [x1, y1] = self.first_step();
        q + w.p[0] * (x1 - t[0]).powi(2) + w.p[1] * (y1 - t[1]).powi(2)
    }

    fn advance(&self, t: &Tracked, u: [f64; 2]) -> Tracked {
        let dt = self.cfg.dt;
        let [x, y, th, v] = t.s;
        let (sin, cos) = th.sin_cos();
        let mut j = t.j;
        for c in 0..2 {
            j[0][c] = t.j[0][c] + dt * (cos * t.j[3][c] - v * sin * t.j[2][c]);
            j[1][c] = t.j[1][c] + dt * (sin * t.j[3][c] + v * cos * t.j[2][c]);
        }
        Tracked { s: [x + v * cos * dt, y + v * sin * dt, th + u[0] * dt, v + u[1] * dt], j }
    }
}

impl Problem for NlpProblem<'_> {
    fn dim(&self) -> usize {
        2 + self.cfg.cbf.order()
    }

    fn n_constraints(&self) -> usize {
        self.cfg.cbf.order() + 8
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn evaluate(&self, z: &[f64]) -> Evaluation {
        let cfg = self.cfg;
        let w = &cfg.weights;
        let m = cfg.cbf.order();
        let n = self.dim();
        let dt = cfg.dt;
        let (u1, u2) = (z[0], z[1]);
        let omegas = &z[2..];

        // x_{t+1} and the drift rollout, each with d/du.
        let s0 = self.state;
        let mut cur = Tracked { s: s0.as_array(), j: [[0.0; 2]; 4] };
        let first = {
            let mut t = self.advance(&cur, [u1, u2]);
            t.j[2][0] = dt;
            t.j[3][1] = dt;
            t
        };
        let mut rollout = vec![cur, first];
        cur = first;
        for _ in 1..m {
            cur = self.advance(&cur, [0.0, 0.0]);
            rollout.push(cur);
        }

        let mut psi = Vec::with_capacity(m + 1);
        let mut dpsi = Vec::with_capacity(m + 1);
        for t in &rollout {
            let (val, g) = psi0_smooth(t.s[0], t.s[1], t.s[2], self.anchor, &self.ctx);
            let du: [f64; 2] = std::array::from_fn(|c| (0..3).map(|k| g[k] * t.j[k][c]).sum());
            psi.push(val);
            dpsi.push(du);
        }
        let chain = relaxed_psi_chain_with_grad(&psi, &cfg.cbf.gammas, omegas);

        let mut g = Vec::with_capacity(m + 8);
        let mut jac = Vec::with_capacity(m + 8);
        for i in 0..m {
            g.push(chain.values[i]);
            let mut row = vec![0.0; n];
            for (k, d) in dpsi.iter().enumerate() {
                row[0] += chain.d_psi0[i][k] * d[0];
                row[1] += chain.d_psi0[i][k] * d[1];
            }
            row[2..].copy_from_slice(&chain.d_omega[i]);
            jac.push(row);
        }
        let x1 = first.s;
        for k in 0..4 {
            let du = first.j[k];
            let mut lo_row = vec![0.0; n];
            lo_row[..2].copy_from_slice(&du);
            let hi_row: Vec<f64> = lo_row.iter().map(|v| -v).collect();
            g.push(x1[k] - cfg.bounds.state_lower[k]);
            jac.push(lo_row);
            g.push(cfg.bounds.state_upper[k] - x1[k]);
            jac.push(hi_row);
        }

        // Decision-dependent cost.
        let mut grad = vec![0.0; n];
        let ur = w.u_ref;
        let mut f = w.r[0] * (u1 - ur[0]).powi(2) + w.r[1] * (u2 - ur[1]).powi(2);
        grad[0] += 2.0 * w.r[0] * (u1 - ur[0]);
        grad[1] += 2.0 * w.r[1] * (u2 - ur[1]);
        for j in 0..m {
            let e = omegas[j] - w.omega_ref[j];
            f += w.s[j] * e * e;
            grad[2 + j] += 2.0 * w.s[j] * e;
        }
        let eth = x1[2] - self.target.theta;
        let ev = x1[3] - self.target.v;
        f += w.p[2] * eth * eth + w.p[3] * ev * ev;
        grad[0] += 2.0 * w.p[2] * eth * dt;
        grad[1] += 2.0 * w.p[3] * ev * dt;
        if w.lambda != 0.0 {
            // Unwrapped heading: the network is not exactly periodic, and wrapping
            // here would put a jump into the cost wherever θ crosses ±π.
            let (d, dd) = self.model.predict_with_gradient(x1[0], x1[1], x1[2]);
            f -= w.lambda * d;
            grad[0] -= w.lambda * dd[2] * dt;
        }
        Evaluation { f, grad, g, jac }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::solver::{solve, SolveStatus};
    use crate::control::{step_dynamics, Control};
    use crate::dataset::NormStats;
    use crate::net::{MlpConfig, MlpModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model() -> ClearanceModel {
        let model = MlpModel::init(MlpConfig { width: 8, n_blocks: 2, skip_stride: 2, seed: 3 }).unwrap();
        let stats =
            NormStats { mu_x: [2.5, 2.5, 0.0], sigma_x: [1.4, 1.4, 1.8], mu_log: -0.5, sigma_log: 0.3, epsilon: 0.2 };
        ClearanceModel { model, stats }
    }

    fn ctx_at(s: &State, anchor: Vec2, d: f64) -> BarrierContext {
        let c = s.configuration();
        BarrierContext { d_tilde_t: d, r_c_t: c.apply(anchor) }
    }

    #[test]
    fn dimensions() {
        let model = toy_model();
        let cfg = ControllerConfig::default();
        let s = State::new(1.0, 1.0, 0.2, 0.5);
        let p = NlpProblem::new(s, s, ctx_at(&s, Vec2::new(0.1, 0.1), 0.3), &model, Vec2::new(0.1, 0.1), &cfg);
        assert_eq!(p.dim(), 4);
        assert_eq!(p.n_constraints(), 10);
        assert_eq!(p.n_constraints() + 2 * p.dim(), 3 * 2 + 12);
    }

    #[test]
    fn cost_and_constraint_gradients_match_finite_differences() {
        let model = toy_model();
        let cfg = ControllerConfig::default();
        let anchor = Vec2::new(0.175, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let s = State::new(
                rng.random_range(0.5..4.5),
                rng.random_range(0.5..4.5),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.5),
            );
            let target = State::new(4.7, 0.5, rng.random_range(-3.0..3.0), 0.3);
            let p = NlpProblem::new(s, target, ctx_at(&s, anchor, rng.random_range(0.05..0.8)), &model, anchor, &cfg);
            let z = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random(), rng.random()];
            let ev = p.evaluate(&z);
            for k in 0..4 {
                let h = 1e-6;
                let (mut a, mut b) = (z, z);
                a[k] += h;
                b[k] -= h;
                let (ea, eb) = (p.evaluate(&a), p.evaluate(&b));
                let check = |an: f64, fd: f64| {
                    let tol = (1e-4 * an.abs().max(fd.abs())).max(1e-6);
                    assert!((an - fd).abs() <= tol, "analytic {an} vs fd {fd}");
                };
                check(ev.grad[k], (ea.f - eb.f) / (2.0 * h));
                for j in 0..ev.g.len() {
                    check(ev.jac[j][k], (ea.g[j] - eb.g[j]) / (2.0 * h));
                }
            }
        }
    }

    #[test]
    fn stationary_at_reference_without_clearance_term() {
        let model = toy_model();
        let mut cfg = ControllerConfig::default();
        cfg.weights.lambda = 0.0;
        let s = State::new(2.0, 2.0, 0.4, 0.0);
        let anchor = Vec2::new(0.175, 0.1);
        let p = NlpProblem::new(s, s, ctx_at(&s, anchor, 0.5), &model, anchor, &cfg);
        let sol = solve(&p, &[3.0, -2.0, 0.2, 0.4], &cfg.solver).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        for (v, r) in sol.z.iter().zip([0.0, 0.0, 1.0, 1.0]) {
            assert!((v - r).abs() < 1e-6, "{:?}", sol.z);
        }
        assert!(sol.eval.f.abs() < 1e-9);
        // Grid search finds nothing lower.
        for i in -20..=20 {
            for k in -20..=20 {
                let z = [i as f64 * 0.05, k as f64 * 0.05, 1.0, 1.0];
                assert!(p.evaluate(&z).f >= sol.eval.f - 1e-12);
            }
        }
    }

    #[test]
    fn unconstrained_minimizer_closed_form() {
        // No barrier pressure (large ball), no clearance term: u1 and u2 solve
        // scalar quadratics r u² + p (e + u dt)².
        let model = toy_model();
        let mut cfg = ControllerConfig::default();
        cfg.weights.lambda = 0.0;
        let anchor = Vec2::new(0.175, 0.1);
        let s = State::new(2.0, 2.0, 0.0, 0.2);
        let target = State::new(4.0, 2.0, 0.3, 0.6);
        let p = NlpProblem::new(s, target, ctx_at(&s, anchor, 5.0), &model, anchor, &cfg);
        let sol = solve(&p, &[0.0, 0.0, 1.0, 1.0], &cfg.solver).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let dt = cfg.dt;
        let closed = |e: f64| -100.0 * e * dt / (1.0 + 100.0 * dt * dt);
        assert!((sol.z[0] - closed(0.0 - 0.3)).abs() < 1e-6);
        assert!((sol.z[1] - closed(0.2 - 0.6)).abs() < 1e-6);
        let next = step_dynamics(&s, &Control { u1: sol.z[0], u2: sol.z[1] }, dt);
        assert!(next.v > s.v && next.theta > s.theta);
    }
}
