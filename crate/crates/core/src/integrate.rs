//! Time integration of compiled models.
//!
//! The algebraic part of the dynamics (acceleration or jerk solve, with
//! multipliers) lives inside the derivative callback, so the integrator
//! itself is a plain explicit ODE method over the state embedding `(q, qd)`
//! or `(q, qd, qdd)`. Fixed-step classic RK4 and adaptive Dormand-Prince
//! 5(4) are provided. Records are emitted at every accepted step and carry
//! the energy `U`, an energy-balance residual filled in after the run, and
//! the constraint residuals.

use crate::eom::{accel_solve, jerk_solve, EomError, JerkOutcome, JetState};
use crate::expr::Binding;
use crate::model::{CompiledModel, OrderClass};
use thiserror::Error;

/// Largest admissible constraint residual of the initial state.
pub const INITIAL_CONSTRAINT_TOL: f64 = 1e-9;
/// Default ceiling on |qdd| (and |qddd|) before the run stops.
pub const DEFAULT_ACCEL_CEILING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Rk45,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub t0: f64,
    pub t1: f64,
    /// Fixed step for RK4, initial step for RK45.
    pub dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Constraint-stabilization gain; 0 integrates the hidden constraint
    /// `df/dt = 0` unmodified.
    pub beta: f64,
    /// Stop with `step_failure` when an acceleration or jerk component
    /// exceeds this magnitude.
    pub accel_ceiling: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk45,
            t0: 0.0,
            t1: 1.0,
            dt: 1e-3,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 1_000_000,
            beta: 0.0,
            accel_ceiling: DEFAULT_ACCEL_CEILING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Completed,
    StepFailure,
    SingularDynamics,
    MaxSteps,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Completed => "completed",
            Status::StepFailure => "step_failure",
            Status::SingularDynamics => "singular_dynamics",
            Status::MaxSteps => "max_steps",
        }
    }
}

/// One accepted integration state.
#[derive(Debug, Clone)]
pub struct Record {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Present for third-order models only.
    pub qdd: Vec<f64>,
    /// Multiplier rates at this state; empty when unconstrained.
    pub mu: Vec<f64>,
    pub energy: f64,
    pub balance_residual: f64,
    pub constraint_residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub status: Status,
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("integrator config invalid: {0}")]
    Config(String),
    #[error("initial state provides jets through order {have}, a {class} model needs {need}")]
    InitialJets {
        class: OrderClass,
        need: u8,
        have: u8,
    },
    #[error("initial state violates constraint {index}: |f| = {residual:.3e}")]
    InitialConstraint { index: usize, residual: f64 },
    #[error(transparent)]
    Eom(#[from] EomError),
}

enum RhsFailure {
    /// Retryable: domain error, non-finite value, or ceiling hit; the
    /// adaptive controller shrinks the step.
    Reject,
    Singular,
}

struct Embedding<'a> {
    cm: &'a CompiledModel,
    beta: f64,
    ceiling: f64,
    rel_tol: f64,
    abs_tol: f64,
    third: bool,
    /// Initial value of the model's gauge scalar; the target the corrected
    /// jerk steers back to.
    gauge0: Option<f64>,
}

struct RhsOut {
    dy: Vec<f64>,
    mu: Vec<f64>,
}

impl<'a> Embedding<'a> {
    fn new(cm: &'a CompiledModel, cfg: &IntegratorConfig) -> Self {
        Embedding {
            cm,
            beta: cfg.beta,
            ceiling: cfg.accel_ceiling,
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            third: cm.class == OrderClass::ThirdOrder,
            gauge0: None,
        }
    }

    fn dim(&self) -> usize {
        if self.third {
            3 * self.cm.n
        } else {
            2 * self.cm.n
        }
    }

    fn pack(&self, initial: &JetState) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.dim());
        y.extend_from_slice(&initial.q);
        y.extend_from_slice(&initial.qd);
        if self.third {
            y.extend_from_slice(&initial.qdd);
        }
        y
    }

    fn split<'y>(&self, y: &'y [f64]) -> (&'y [f64], &'y [f64], &'y [f64]) {
        let n = self.cm.n;
        if self.third {
            (&y[..n], &y[n..2 * n], &y[2 * n..])
        } else {
            (&y[..n], &y[n..], &[])
        }
    }

    fn admissible(&self, derived: &[f64]) -> bool {
        derived.iter().all(|v| v.is_finite() && v.abs() <= self.ceiling)
    }

    fn rhs(&self, t: f64, y: &[f64]) -> Result<RhsOut, RhsFailure> {
        if !y.iter().all(|v| v.is_finite()) {
            return Err(RhsFailure::Reject);
        }
        let (q, qd, qdd) = self.split(y);
        if self.third {
            match jerk_solve(self.cm, t, q, qd, qdd) {
                Ok(out) => {
                    let qddd = self.gauge_fixed(t, q, qd, qdd, out)?;
                    if !self.admissible(qdd) || !self.admissible(&qddd) {
                        return Err(RhsFailure::Reject);
                    }
                    let mut dy = Vec::with_capacity(self.dim());
                    dy.extend_from_slice(qd);
                    dy.extend_from_slice(qdd);
                    dy.extend_from_slice(&qddd);
                    Ok(RhsOut { dy, mu: Vec::new() })
                }
                Err(EomError::SingularDynamics { .. }) => Err(RhsFailure::Singular),
                Err(_) => Err(RhsFailure::Reject),
            }
        } else {
            match accel_solve(self.cm, t, q, qd, self.beta) {
                Ok(out) => {
                    if !self.admissible(&out.qdd) {
                        return Err(RhsFailure::Reject);
                    }
                    let mut dy = Vec::with_capacity(self.dim());
                    dy.extend_from_slice(qd);
                    dy.extend_from_slice(&out.qdd);
                    Ok(RhsOut { dy, mu: out.mu })
                }
                Err(EomError::SingularDynamics { .. }) => Err(RhsFailure::Singular),
                Err(_) => Err(RhsFailure::Reject),
            }
        }
    }

    /// Resolves the jerk's free component. A rank-deficient mass matrix
    /// leaves `qddd` undetermined along its null direction and the
    /// minimum-norm pick is not parametrization-aware, so solutions drift
    /// off the surface `g = g(0)`; this correction chooses the component
    /// that zeroes `dg/dt` instead, with `beta` damping accumulated
    /// deviation. Models without a gauge keep the minimum-norm jerk.
    fn gauge_fixed(
        &self,
        t: f64,
        q: &[f64],
        qd: &[f64],
        qdd: &[f64],
        out: JerkOutcome,
    ) -> Result<Vec<f64>, RhsFailure> {
        let (Some(tables), Some(g0), Some(dir)) =
            (&self.cm.gauge, self.gauge0, &out.null_direction)
        else {
            return Ok(out.qddd);
        };
        let state = JetState::third_order(t, q.to_vec(), qd.to_vec(), qdd.to_vec());
        let b = state.binding();
        let eval = |e: &crate::expr::Expression| e.eval_memo(&b).map_err(|_| RhsFailure::Reject);
        let mut w = Vec::with_capacity(self.cm.n);
        for e in &tables.accel_grad {
            w.push(eval(e)?);
        }
        let along: f64 = w.iter().zip(dir).map(|(a, b)| a * b).sum();
        let scale = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A gauge blind to the free direction cannot steer it.
        if along.abs() <= 1e-9 * scale.max(1.0) {
            return Ok(out.qddd);
        }
        let rate_rem = eval(&tables.rate_rem)?;
        let value = eval(&tables.value)?;
        let mut qddd = out.qddd;
        let rate: f64 = rate_rem + w.iter().zip(&qddd).map(|(a, b)| a * b).sum::<f64>();
        let c = -(rate + self.beta * (value - g0)) / along;
        for (x, v) in qddd.iter_mut().zip(dir) {
            *x += c * v;
        }
        Ok(qddd)
    }

    fn record(&self, t: f64, y: &[f64], mu: &[f64]) -> Result<Record, RhsFailure> {
        let (q, qd, qdd) = self.split(y);
        let state = JetState {
            t,
            q: q.to_vec(),
            qd: qd.to_vec(),
            qdd: qdd.to_vec(),
            qddd: Vec::new(),
            qdddd: Vec::new(),
            mu: mu.to_vec(),
        };
        let b = state.binding();
        let energy = self.cm.energy.eval_memo(&b).map_err(|_| RhsFailure::Reject)?;
        let constraint_residuals = self
            .cm
            .constraints
            .iter()
            .map(|f| f.eval_memo(&b))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| RhsFailure::Reject)?;
        if !energy.is_finite() {
            return Err(RhsFailure::Reject);
        }
        Ok(Record {
            t,
            q: q.to_vec(),
            qd: qd.to_vec(),
            qdd: qdd.to_vec(),
            mu: mu.to_vec(),
            energy,
            balance_residual: 0.0,
            constraint_residuals,
        })
    }
}

fn axpy(y: &[f64], scale: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + scale * b).collect()
}

fn combine(y: &[f64], dt: f64, ks: &[&Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (k, w) in ks.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        for (o, kv) in out.iter_mut().zip(k.iter()) {
            *o += dt * w * kv;
        }
    }
    out
}

// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

enum StepOutcome {
    Accepted { y: Vec<f64>, err: f64 },
    ErrTooLarge { err: f64 },
    Failed(RhsFailure),
}

fn rk45_step(emb: &Embedding, t: f64, y: &[f64], dt: f64) -> StepOutcome {
    let mut ks: Vec<Vec<f64>> = Vec::with_capacity(7);
    match emb.rhs(t, y) {
        Ok(out) => ks.push(out.dy),
        Err(f) => return StepOutcome::Failed(f),
    }
    for stage in 0..6 {
        let mut trial = y.to_vec();
        for (j, a) in DP_A[stage].iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (tv, kv) in trial.iter_mut().zip(ks[j].iter()) {
                *tv += dt * a * kv;
            }
        }
        match emb.rhs(t + DP_C[stage] * dt, &trial) {
            Ok(out) => ks.push(out.dy),
            Err(f) => return StepOutcome::Failed(f),
        }
    }
    let krefs: Vec<&Vec<f64>> = ks.iter().collect();
    let y5 = combine(y, dt, &krefs, &DP_B5);
    let y4 = combine(y, dt, &krefs, &DP_B4);

    let mut acc = 0.0;
    for i in 0..y.len() {
        let scale = emb.abs_tol + emb.rel_tol * y[i].abs().max(y5[i].abs());
        let e = (y5[i] - y4[i]) / scale;
        acc += e * e;
    }
    let err = (acc / y.len() as f64).sqrt();
    if !err.is_finite() {
        return StepOutcome::Failed(RhsFailure::Reject);
    }
    if err <= 1.0 {
        StepOutcome::Accepted { y: y5, err }
    } else {
        StepOutcome::ErrTooLarge { err }
    }
}

fn rk4_step(emb: &Embedding, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>, RhsFailure> {
    let k1 = emb.rhs(t, y)?.dy;
    let k2 = emb.rhs(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k1))?.dy;
    let k3 = emb.rhs(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k2))?.dy;
    let k4 = emb.rhs(t + dt, &axpy(y, dt, &k3))?.dy;
    let mut out = y.to_vec();
    for i in 0..out.len() {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

fn validate_config(cfg: &IntegratorConfig) -> Result<(), SimulateError> {
    if !(cfg.t1 > cfg.t0) {
        return Err(SimulateError::Config(format!(
            "t1 = {} must exceed t0 = {}",
            cfg.t1, cfg.t0
        )));
    }
    if !(cfg.dt > 0.0) {
        return Err(SimulateError::Config(format!("dt = {} must be positive", cfg.dt)));
    }
    if !(cfg.rel_tol > 0.0) || !(cfg.abs_tol > 0.0) {
        return Err(SimulateError::Config(
            "tolerances must be positive".to_string(),
        ));
    }
    if cfg.max_steps == 0 {
        return Err(SimulateError::Config("max_steps must be positive".to_string()));
    }
    Ok(())
}

/// Integrates the compiled dynamics from `initial` over `[t0, t1]`.
///
/// Mid-run solver singularities, rejected steps at the minimum step size,
/// and the acceleration ceiling end the run early with the partial
/// trajectory and the matching status.
pub fn simulate(
    cm: &CompiledModel,
    initial: &JetState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SimulateError> {
    validate_config(cfg)?;
    let mut emb = Embedding::new(cm, cfg);

    let need: u8 = if emb.third { 2 } else { 1 };
    let have = provided_order(initial, cm.n);
    if have < need as i32 {
        return Err(SimulateError::InitialJets {
            class: cm.class,
            need,
            have: have.max(0) as u8,
        });
    }
    {
        let b = initial.binding();
        for (index, f) in cm.constraints.iter().enumerate() {
            let residual = f.eval_memo(&b).map_err(EomError::from)?;
            if residual.abs() > INITIAL_CONSTRAINT_TOL {
                return Err(SimulateError::InitialConstraint { index, residual });
            }
        }
        if let Some(tables) = &cm.gauge {
            emb.gauge0 = Some(tables.value.eval_memo(&b).map_err(EomError::from)?);
        }
    }
    let emb = emb;

    let span = cfg.t1 - cfg.t0;
    let dt_min = cfg.dt / 1e4;
    let dt_max = span / 2.0;
    let tiny = span * 1e-14;

    let mut t = cfg.t0;
    let mut y = emb.pack(initial);
    let mut dt = cfg.dt.min(dt_max);
    let mut records: Vec<Record> = Vec::new();

    // Initial record; its multipliers come from the solve at t0.
    let status = 'run: {
        let mu0 = match emb.rhs(t, &y) {
            Ok(out) => out.mu,
            Err(RhsFailure::Singular) => break 'run Status::SingularDynamics,
            Err(RhsFailure::Reject) => break 'run Status::StepFailure,
        };
        match emb.record(t, &y, &mu0) {
            Ok(r) => records.push(r),
            Err(_) => break 'run Status::StepFailure,
        }

        loop {
            if cfg.t1 - t <= tiny {
                break 'run Status::Completed;
            }
            if records.len() >= cfg.max_steps {
                break 'run Status::MaxSteps;
            }
            let step_dt = dt.min(cfg.t1 - t);
            match cfg.method {
                Method::Rk4 => match rk4_step(&emb, t, &y, step_dt) {
                    Ok(next) => {
                        t += step_dt;
                        y = next;
                    }
                    Err(RhsFailure::Singular) => break 'run Status::SingularDynamics,
                    Err(RhsFailure::Reject) => break 'run Status::StepFailure,
                },
                Method::Rk45 => match rk45_step(&emb, t, &y, step_dt) {
                    StepOutcome::Accepted { y: next, err } => {
                        t += step_dt;
                        y = next;
                        let factor = if err == 0.0 {
                            5.0
                        } else {
                            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        dt = (dt * factor).clamp(dt_min, dt_max);
                    }
                    StepOutcome::ErrTooLarge { err } => {
                        if dt <= dt_min {
                            break 'run Status::StepFailure;
                        }
                        let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                        dt = (dt * factor).max(dt_min);
                        continue;
                    }
                    StepOutcome::Failed(RhsFailure::Singular) => {
                        break 'run Status::SingularDynamics
                    }
                    StepOutcome::Failed(RhsFailure::Reject) => {
                        if dt <= dt_min {
                            break 'run Status::StepFailure;
                        }
                        dt = (dt * 0.2).max(dt_min);
                        continue;
                    }
                },
            }
            // Record the accepted state; constrained models re-solve for
            // the multipliers there.
            let mu = if cm.m > 0 {
                match emb.rhs(t, &y) {
                    Ok(out) => out.mu,
                    Err(RhsFailure::Singular) => break 'run Status::SingularDynamics,
                    Err(RhsFailure::Reject) => break 'run Status::StepFailure,
                }
            } else {
                Vec::new()
            };
            match emb.record(t, &y, &mu) {
                Ok(r) => records.push(r),
                Err(_) => break 'run Status::StepFailure,
            }
        }
    };

    let mut traj = Trajectory { records, status };
    fill_balance_residuals(cm, &mut traj);
    Ok(traj)
}

fn provided_order(state: &JetState, n: usize) -> i32 {
    let jets = [&state.q, &state.qd, &state.qdd, &state.qddd];
    let mut have = -1;
    for (order, v) in jets.into_iter().enumerate() {
        if v.len() == n {
            have = order as i32;
        } else {
            break;
        }
    }
    have
}

fn record_binding(r: &Record) -> Binding {
    let state = JetState {
        t: r.t,
        q: r.q.clone(),
        qd: r.qd.clone(),
        qdd: r.qdd.clone(),
        qddd: Vec::new(),
        qdddd: Vec::new(),
        mu: r.mu.clone(),
    };
    state.binding()
}

/// Three-point nonuniform finite-difference derivative of `(t_i, u_i)` at
/// index 1 of the window `(0, 1, 2)` shifted to `at`.
fn fd3(t: [f64; 3], u: [f64; 3], at: f64) -> f64 {
    let l0 = (2.0 * at - t[1] - t[2]) / ((t[0] - t[1]) * (t[0] - t[2]));
    let l1 = (2.0 * at - t[0] - t[2]) / ((t[1] - t[0]) * (t[1] - t[2]));
    let l2 = (2.0 * at - t[0] - t[1]) / ((t[2] - t[0]) * (t[2] - t[1]));
    u[0] * l0 + u[1] * l1 + u[2] * l2
}

fn fill_balance_residuals(cm: &CompiledModel, traj: &mut Trajectory) {
    let n = traj.records.len();
    if n < 3 {
        return;
    }
    let times: Vec<f64> = traj.records.iter().map(|r| r.t).collect();
    let energies: Vec<f64> = traj.records.iter().map(|r| r.energy).collect();
    for i in 0..n {
        // Interior records use the centered window; the ends reuse their
        // nearest window, evaluated one-sidedly.
        let w = i.clamp(1, n - 2);
        let tw = [times[w - 1], times[w], times[w + 1]];
        let uw = [energies[w - 1], energies[w], energies[w + 1]];
        let du = fd3(tw, uw, times[i]);
        let rhs = cm
            .balance_rhs
            .eval_memo(&record_binding(&traj.records[i]))
            .unwrap_or(f64::NAN);
        traj.records[i].balance_residual = (du - rhs).abs();
    }
}

/// Maximum energy-balance residual over interior records, recomputed from
/// the trajectory. Returns 0 for trajectories with fewer than three
/// records.
pub fn monitor_balance(cm: &CompiledModel, traj: &Trajectory) -> f64 {
    let n = traj.records.len();
    if n < 3 {
        return 0.0;
    }
    let mut max = 0.0_f64;
    for i in 1..n - 1 {
        let tw = [traj.records[i - 1].t, traj.records[i].t, traj.records[i + 1].t];
        let uw = [
            traj.records[i - 1].energy,
            traj.records[i].energy,
            traj.records[i + 1].energy,
        ];
        let du = fd3(tw, uw, tw[1]);
        let rhs = cm
            .balance_rhs
            .eval_memo(&record_binding(&traj.records[i]))
            .unwrap_or(f64::NAN);
        let residual = (du - rhs).abs();
        if residual.is_nan() {
            return f64::NAN;
        }
        max = max.max(residual);
    }
    max
}
