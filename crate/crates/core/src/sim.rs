//! Closed-loop runs: waypoint sequencing, per-step control, ground-truth sweep
//! audits and trajectory logs.
//!
//! Trajectory CSV columns, one row per executed step (state before the step):
//!
//! ```text
//! step,x,y,theta,v,u1,u2,omega_1..omega_m,d_pred,d_true,psi0,status,solve_ms,sweep_ok,sweep_min,displacement
//! ```
//!
//! `psi0` is the exact barrier at the resulting state under this step's ball,
//! `sweep_min` the smallest ground-truth clearance along the interpolated motion
//! and `displacement` the largest boundary-sample travel. Numbers use the
//! shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{psi0, BarrierContext};
use crate::control::{control_step, Control, ControlError, ControllerConfig, SolveStatus, State, WarmStart};
use crate::geometry::{check_step_safe, clearance, sweep_displacement, ObstacleSet, RobotShape, Vec2};
use crate::net::ClearanceModel;

pub const DEFAULT_ARRIVAL_RADIUS: f64 = 0.1;
pub const DEFAULT_N_INTERP: usize = 20;
/// Consecutive low-motion steps without waypoint progress that end a run.
pub const STALL_STEPS: usize = 200;
pub const STALL_DISTANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial configuration penetrates an obstacle (clearance {0})")]
    InitialCollision(f64),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("log line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Reference speed while heading for this waypoint.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub start: [f64; 2],
    pub initial_speed: f64,
    /// Defaults to the bearing of the final waypoint.
    #[serde(default)]
    pub initial_heading: Option<f64>,
    pub waypoints: Vec<Waypoint>,
    #[serde(default = "default_radius")]
    pub arrival_radius: f64,
    pub max_steps: usize,
    #[serde(default = "default_interp")]
    pub n_interp: usize,
}

fn default_radius() -> f64 {
    DEFAULT_ARRIVAL_RADIUS
}

fn default_interp() -> usize {
    DEFAULT_N_INTERP
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.waypoints.is_empty() {
            return Err(SimError::Scenario("at least one waypoint is required".into()));
        }
        if !(self.arrival_radius > 0.0) {
            return Err(SimError::Scenario("arrival radius must be positive".into()));
        }
        if self.n_interp < 2 {
            return Err(SimError::Scenario("n_interp must be at least 2".into()));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> State {
        let [x, y] = self.start;
        let theta = self.initial_heading.unwrap_or_else(|| {
            let w = self.waypoints.last().map_or(Vec2::new(x, y), |w| Vec2::new(w.x, w.y));
            (w.y - y).atan2(w.x - x)
        });
        State::new(x, y, theta, self.initial_speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Collided,
    Stalled,
    StepLimit,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Reached => "reached",
            Outcome::Collided => "collided",
            Outcome::Stalled => "stalled",
            Outcome::StepLimit => "step_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub state: State,
    pub control: Control,
    pub omegas: Vec<f64>,
    pub d_pred: f64,
    pub d_true: f64,
    pub psi0: f64,
    pub status: SolveStatus,
    /// `None` when read from a log written without timings.
    pub solve_ms: Option<f64>,
    pub sweep_ok: bool,
    pub sweep_min: f64,
    pub displacement: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub order: usize,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub log: TrajectoryLog,
    pub outcome: Outcome,
    pub final_state: State,
    /// Controller error that ended the run, if any.
    pub abort: Option<String>,
}

fn bearing(s: &State, w: &Waypoint) -> f64 {
    (w.y - s.y).atan2(w.x - s.x)
}

fn within(s: &State, w: &Waypoint, r: f64) -> bool {
    Vec2::new(s.x, s.y).dist(Vec2::new(w.x, w.y)) <= r
}

/// Runs `scenario` until the last waypoint is reached or the run fails.
pub fn run(
    scenario: &Scenario,
    model: &ClearanceModel,
    shape: &RobotShape,
    obstacles: &ObstacleSet,
    cfg: &ControllerConfig,
) -> Result<RunResult, SimError> {
    scenario.validate()?;
    cfg.validate()?;
    let mut state = scenario.initial_state();
    let d0 = clearance(shape, &state.configuration(), obstacles).distance;
    if d0 < 0.0 {
        return Err(SimError::InitialCollision(d0));
    }
    let wps = &scenario.waypoints;
    let r = scenario.arrival_radius;
    let mut log = TrajectoryLog { order: cfg.cbf.order(), records: Vec::new() };
    let mut wp = 0;
    while wp < wps.len() && within(&state, &wps[wp], r) {
        wp += 1;
    }
    let finish = |log, outcome, state, abort| Ok(RunResult { log, outcome, final_state: state, abort });
    if wp == wps.len() {
        return finish(log, Outcome::Reached, state, None);
    }
    let mut warm: Option<WarmStart> = None;
    let mut idle = 0;
    for step in 0..scenario.max_steps {
        let w = wps[wp];
        let target = State::new(w.x, w.y, bearing(&state, &w), w.speed);
        let sol = match control_step(&state, &target, model, shape, cfg, warm.as_ref()) {
            Ok(sol) => sol,
            Err(e) => return finish(log, Outcome::Stalled, state, Some(e.to_string())),
        };
        let (from, to) = (state.configuration(), sol.next.configuration());
        let audit = check_step_safe(shape, &from, &to, obstacles, scenario.n_interp);
        let ctx = BarrierContext::new(shape, &from, sol.d_tilde);
        log.records.push(StepRecord {
            step,
            state,
            control: sol.u_star,
            omegas: sol.omega_star.clone(),
            d_pred: sol.d_tilde,
            d_true: clearance(shape, &from, obstacles).distance,
            psi0: psi0(&to, &ctx, shape),
            status: sol.status,
            solve_ms: Some(sol.solve_time.as_secs_f64() * 1e3),
            sweep_ok: audit.safe,
            sweep_min: audit.worst_clearance,
            displacement: sweep_displacement(shape, &from, &to, scenario.n_interp),
        });
        let moved = Vec2::new(state.x, state.y).dist(Vec2::new(sol.next.x, sol.next.y));
        state = sol.next;
        if !audit.safe {
            return finish(log, Outcome::Collided, state, None);
        }
        let before = wp;
        while wp < wps.len() && within(&state, &wps[wp], r) {
            wp += 1;
        }
        if wp == wps.len() {
            return finish(log, Outcome::Reached, state, None);
        }
        idle = if wp == before && moved < STALL_DISTANCE { idle + 1 } else { 0 };
        if idle >= STALL_STEPS {
            return finish(log, Outcome::Stalled, state, None);
        }
        warm = Some(sol.warm_start());
    }
    finish(log, Outcome::StepLimit, state, None)
}

impl TrajectoryLog {
    pub fn header(&self) -> String {
        let mut h = String::from("step,x,y,theta,v,u1,u2");
        for i in 1..=self.order {
            let _ = write!(h, ",omega_{i}");
        }
        h.push_str(",d_pred,d_true,psi0,status,solve_ms,sweep_ok,sweep_min,displacement");
        h
    }

    /// Writes the CSV; with `timings = false` the `solve_ms` column is left empty
    /// so that repeated runs produce identical bytes.
    pub fn write_csv<W: Write>(&self, mut w: W, timings: bool) -> std::io::Result<()> {
        writeln!(w, "{}", self.header())?;
        for r in &self.records {
            let s = &r.state;
            let mut line = format!("{},{},{},{},{},{},{}", r.step, s.x, s.y, s.theta, s.v, r.control.u1, r.control.u2);
            for o in &r.omegas {
                let _ = write!(line, ",{o}");
            }
            let ms = match (timings, r.solve_ms) {
                (true, Some(ms)) => format!("{ms}"),
                _ => String::new(),
            };
            let _ = write!(
                line,
                ",{},{},{},{},{},{},{},{}",
                r.d_pred,
                r.d_true,
                r.psi0,
                r.status.as_str(),
                ms,
                r.sweep_ok as u8,
                r.sweep_min,
                r.displacement
            );
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv(&self, timings: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timings).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, SimError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(SimError::Parse { line: 1, msg: "empty log".into() })??;
        let order = header.split(',').filter(|c| c.starts_with("omega_")).count();
        let log = TrajectoryLog { order, records: Vec::new() };
        if header != log.header() {
            return Err(SimError::Parse { line: 1, msg: "unexpected header".into() });
        }
        let mut log = log;
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let err = |msg: &str| SimError::Parse { line: lineno, msg: msg.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 + order + 8 {
                return Err(err("wrong column count"));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| err(&format!("bad number `{}`", f[k])));
            let status = match f[10 + order] {
                "optimal" => SolveStatus::Optimal,
                "max_iter" => SolveStatus::MaxIter,
                "infeasible_fallback" => SolveStatus::InfeasibleFallback,
                other => return Err(err(&format!("bad status `{other}`"))),
            };
            let solve_ms = if f[11 + order].is_empty() { None } else { Some(num(11 + order)?) };
            log.records.push(StepRecord {
                step: f[0].parse().map_err(|_| err("bad step"))?,
                state: State::new(num(1)?, num(2)?, num(3)?, num(4)?),
                control: Control { u1: num(5)?, u2: num(6)? },
                omegas: (0..order).map(|k| num(7 + k)).collect::<Result<_, _>>()?,
                d_pred: num(7 + order)?,
                d_true: num(8 + order)?,
                psi0: num(9 + order)?,
                status,
                solve_ms,
                sweep_ok: match f[12 + order] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(err("bad sweep_ok")),
                },
                sweep_min: num(13 + order)?,
                displacement: num(14 + order)?,
            });
        }
        Ok(log)
    }
}

/// Aggregate safety and timing figures of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub steps: usize,
    /// Smallest ground-truth clearance along every interpolated step.
    pub min_true_clearance: f64,
    pub worst_psi0: f64,
    pub mean_solve_ms: f64,
    pub std_solve_ms: f64,
    pub optimal_steps: usize,
    pub max_iter_steps: usize,
    pub infeasible_steps: usize,
    pub collisions: usize,
    pub max_prediction_error: f64,
    /// Steps whose boundary travel exceeded the true clearance at the step start.
    pub displacement_flags: usize,
}

impl AuditReport {
    pub fn to_text(&self) -> String {
        format!(
            "steps {}\nmin_true_clearance {}\nworst_psi0 {}\nmean_solve_ms {}\nstd_solve_ms {}\n\
             optimal_steps {}\nmax_iter_steps {}\ninfeasible_steps {}\ncollisions {}\n\
             max_prediction_error {}\ndisplacement_flags {}\n",
            self.steps,
            self.min_true_clearance,
            self.worst_psi0,
            self.mean_solve_ms,
            self.std_solve_ms,
            self.optimal_steps,
            self.max_iter_steps,
            self.infeasible_steps,
            self.collisions,
            self.max_prediction_error,
            self.displacement_flags
        )
    }
}

/// Pure aggregation over the records; an empty log gives an all-zero report.
pub fn audit_report(log: &TrajectoryLog) -> AuditReport {
    let recs = &log.records;
    if recs.is_empty() {
        return AuditReport::default();
    }
    let times: Vec<f64> = recs.iter().filter_map(|r| r.solve_ms).collect();
    let (mean, std) = if times.is_empty() {
        (0.0, 0.0)
    } else {
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        (mean, (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt())
    };
    let count = |s: SolveStatus| recs.iter().filter(|r| r.status == s).count();
    AuditReport {
        steps: recs.len(),
        min_true_clearance: recs.iter().map(|r| r.sweep_min.min(r.d_true)).fold(f64::INFINITY, f64::min),
        worst_psi0: recs.iter().map(|r| r.psi0).fold(f64::INFINITY, f64::min),
        mean_solve_ms: mean,
        std_solve_ms: std,
        optimal_steps: count(SolveStatus::Optimal),
        max_iter_steps: count(SolveStatus::MaxIter),
        infeasible_steps: count(SolveStatus::InfeasibleFallback),
        collisions: recs.iter().filter(|r| !r.sweep_ok).count(),
        max_prediction_error: recs.iter().map(|r| (r.d_pred - r.d_true).abs()).fold(0.0, f64::max),
        displacement_flags: recs.iter().filter(|r| r.displacement > r.d_true).count(),
    }
}
