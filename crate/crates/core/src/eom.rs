//! Numeric evaluation of the compiled equation-of-motion tables.
//!
//! A [`JetState`] carries time, coordinate jets to whatever order the caller
//! has, and multiplier values. Evaluation functions check that the state
//! provides every jet order their table actually references, so a missing
//! order is a typed error rather than an unbound-symbol panic.
//!
//! Solvers: [`accel_solve`] inverts the affine system `{X = 0, df/dt = -beta
//! f}` for second-order (possibly constrained) models; [`jerk_solve`] inverts
//! `M qddd = X|_{qddd=0}` for third-order models, falling back to a
//! minimum-norm least-squares solution when the mass matrix is singular but
//! the system is consistent.

use crate::expr::{Binding, EvalError, Expression, Symbol};
use crate::linalg;
use crate::model::{CompiledModel, OrderClass};
use thiserror::Error;

/// Direct LU solves are trusted up to this condition number.
pub const COND_LIMIT: f64 = 1e12;
/// Relative residual bound for accepting a least-squares jerk solution on a
/// singular mass matrix.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Time, coordinate jets, and constraint multiplier rates. Empty vectors
/// mean "not provided"; provided vectors must have length `n` (or `m` for
/// `mu`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JetState {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub qddd: Vec<f64>,
    pub qdddd: Vec<f64>,
    pub mu: Vec<f64>,
}

impl JetState {
    pub fn second_order(t: f64, q: Vec<f64>, qd: Vec<f64>) -> Self {
        JetState {
            t,
            q,
            qd,
            ..Default::default()
        }
    }

    pub fn third_order(t: f64, q: Vec<f64>, qd: Vec<f64>, qdd: Vec<f64>) -> Self {
        JetState {
            t,
            q,
            qd,
            qdd,
            ..Default::default()
        }
    }

    fn jets(&self) -> [&Vec<f64>; 5] {
        [&self.q, &self.qd, &self.qdd, &self.qddd, &self.qdddd]
    }

    /// Highest contiguous jet order with a full set of `n` values.
    fn provided_order(&self, n: usize) -> Option<u8> {
        let mut have: Option<u8> = None;
        for (order, values) in self.jets().into_iter().enumerate() {
            if values.len() == n {
                have = Some(order as u8);
            } else {
                break;
            }
        }
        have
    }

    /// Binds every provided slot; leaves absent slots unbound.
    pub fn binding(&self) -> Binding {
        let mut b = Binding::new();
        b.set(Symbol::Time, self.t);
        for (order, values) in self.jets().into_iter().enumerate() {
            for (i, v) in values.iter().enumerate() {
                b.set(Symbol::coord(i, order as u8), *v);
            }
        }
        for (a, v) in self.mu.iter().enumerate() {
            b.set(Symbol::multiplier(a, 1), *v);
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovectorKind {
    /// Equation-of-motion covector `X_k`.
    EquationOfMotion,
    /// Variational covector `Y_k`.
    Variational,
}

#[derive(Debug, Clone)]
pub struct Covector {
    pub kind: CovectorKind,
    pub components: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum EomError {
    #[error("state carries {have} coordinates, model has {need}")]
    Dimension { need: usize, have: usize },
    #[error("state provides jets through order {have}, the table needs order {need}")]
    MissingJetOrder { need: u8, have: u8 },
    #[error("state carries {have} multiplier rates, model has {need} constraints")]
    MultiplierCount { need: usize, have: usize },
    #[error("the variational covector is undefined for constrained models")]
    VariationalConstrained,
    #[error("`{op}` does not apply to a {class} model")]
    WrongClass { op: &'static str, class: OrderClass },
    #[error("singular dynamics: {detail}")]
    SingularDynamics { detail: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn table_order(exprs: &[Expression]) -> u8 {
    exprs
        .iter()
        .filter_map(Expression::max_coord_order)
        .max()
        .unwrap_or(0)
}

fn check_state(
    cm: &CompiledModel,
    state: &JetState,
    exprs: &[Expression],
    needs_mu: bool,
) -> Result<(), EomError> {
    if state.q.len() != cm.n {
        return Err(EomError::Dimension {
            need: cm.n,
            have: state.q.len(),
        });
    }
    let need = table_order(exprs);
    let have = state.provided_order(cm.n).unwrap_or(0);
    if state.provided_order(cm.n).is_none() || have < need {
        return Err(EomError::MissingJetOrder { need, have });
    }
    if needs_mu && state.mu.len() != cm.m {
        return Err(EomError::MultiplierCount {
            need: cm.m,
            have: state.mu.len(),
        });
    }
    Ok(())
}

fn eval_vec(exprs: &[Expression], b: &Binding) -> Result<Vec<f64>, EomError> {
    exprs.iter().map(|e| Ok(e.eval_memo(b)?)).collect()
}

fn eval_mat(rows: &[Vec<Expression>], b: &Binding) -> Result<Vec<Vec<f64>>, EomError> {
    rows.iter().map(|row| eval_vec(row, b)).collect()
}

/// Evaluates the equation-of-motion covector `X_k` at `state`.
pub fn eval_x(cm: &CompiledModel, state: &JetState) -> Result<Covector, EomError> {
    check_state(cm, state, &cm.x_covector, true)?;
    let b = state.binding();
    Ok(Covector {
        kind: CovectorKind::EquationOfMotion,
        components: eval_vec(&cm.x_covector, &b)?,
    })
}

/// Evaluates the variational covector `Y_k` at `state`. Only defined for
/// unconstrained models.
pub fn eval_y(cm: &CompiledModel, state: &JetState) -> Result<Covector, EomError> {
    let table = cm
        .y_covector
        .as_ref()
        .ok_or(EomError::VariationalConstrained)?;
    check_state(cm, state, table, false)?;
    let b = state.binding();
    Ok(Covector {
        kind: CovectorKind::Variational,
        components: eval_vec(table, &b)?,
    })
}

/// Evaluates the mass matrix `M_kj = 2 d2P/dqdd_k dqdd_j` at `state`.
pub fn mass_matrix(cm: &CompiledModel, state: &JetState) -> Result<Vec<Vec<f64>>, EomError> {
    let flat: Vec<Expression> = cm.mass.iter().flatten().cloned().collect();
    check_state(cm, state, &flat, false)?;
    let b = state.binding();
    eval_mat(&cm.mass, &b)
}

#[derive(Debug, Clone)]
pub struct AccelOutcome {
    pub qdd: Vec<f64>,
    /// Multiplier rates `lamd_a`; empty for unconstrained models.
    pub mu: Vec<f64>,
    pub condition: f64,
}

/// Solves `{X = 0, d f_a/dt = -beta f_a}` for accelerations and multiplier
/// rates at `(t, q, qd)`. `beta` is the constraint-stabilization gain.
pub fn accel_solve(
    cm: &CompiledModel,
    t: f64,
    q: &[f64],
    qd: &[f64],
    beta: f64,
) -> Result<AccelOutcome, EomError> {
    if cm.class == OrderClass::ThirdOrder {
        return Err(EomError::WrongClass {
            op: "accel_solve",
            class: cm.class,
        });
    }
    let n = cm.n;
    let m = cm.m;
    if q.len() != n || qd.len() != n {
        return Err(EomError::Dimension {
            need: n,
            have: q.len().min(qd.len()),
        });
    }
    let state = JetState::second_order(t, q.to_vec(), qd.to_vec());
    let b = state.binding();

    let a = eval_mat(&cm.accel_a, &b)?;
    let bm = eval_mat(&cm.accel_b, &b)?;
    let c = eval_vec(&cm.accel_c, &b)?;
    let g = eval_mat(&cm.constraint_vel_jac, &b)?;
    let drift = eval_vec(&cm.constraint_drift, &b)?;
    let f = eval_vec(&cm.constraints, &b)?;

    let size = n + m;
    let mut kkt = vec![vec![0.0; size]; size];
    let mut rhs = vec![0.0; size];
    for k in 0..n {
        for j in 0..n {
            kkt[k][j] = a[k][j];
        }
        for al in 0..m {
            kkt[k][n + al] = bm[k][al];
        }
        rhs[k] = -c[k];
    }
    for al in 0..m {
        for j in 0..n {
            kkt[n + al][j] = g[al][j];
        }
        rhs[n + al] = -beta * f[al] - drift[al];
    }

    let condition = linalg::condition_number(&kkt);
    if !condition.is_finite() || condition > COND_LIMIT {
        return Err(EomError::SingularDynamics {
            detail: format!("acceleration system condition number {condition:.3e}"),
        });
    }
    let sol = linalg::solve(&kkt, &rhs).ok_or_else(|| EomError::SingularDynamics {
        detail: "acceleration system LU factorization failed".to_string(),
    })?;
    Ok(AccelOutcome {
        qdd: sol[..n].to_vec(),
        mu: sol[n..].to_vec(),
        condition,
    })
}

#[derive(Debug, Clone)]
pub struct JerkOutcome {
    pub qddd: Vec<f64>,
    pub condition: f64,
    /// True when the singular-consistent least-squares path produced the
    /// minimum-norm solution.
    pub least_squares: bool,
    /// Unit null vector of the mass matrix on the least-squares path.
    /// Adding any multiple of it to `qddd` still solves the system; the
    /// integrator spends that freedom on the model's gauge condition.
    pub null_direction: Option<Vec<f64>>,
}

/// Solves `M qddd = X|_{qddd = 0}` for the jerk at `(t, q, qd, qdd)`.
pub fn jerk_solve(
    cm: &CompiledModel,
    t: f64,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
) -> Result<JerkOutcome, EomError> {
    if cm.class != OrderClass::ThirdOrder {
        return Err(EomError::WrongClass {
            op: "jerk_solve",
            class: cm.class,
        });
    }
    let n = cm.n;
    if q.len() != n || qd.len() != n || qdd.len() != n {
        return Err(EomError::Dimension {
            need: n,
            have: q.len().min(qd.len()).min(qdd.len()),
        });
    }
    let state = JetState::third_order(t, q.to_vec(), qd.to_vec(), qdd.to_vec());
    let b = state.binding();
    let m = eval_mat(&cm.mass, &b)?;
    let rem = eval_vec(&cm.jerk_rem, &b)?;

    let condition = linalg::condition_number(&m);
    if condition.is_finite() && condition <= COND_LIMIT {
        let qddd = linalg::solve(&m, &rem).ok_or_else(|| EomError::SingularDynamics {
            detail: "mass matrix LU factorization failed".to_string(),
        })?;
        return Ok(JerkOutcome {
            qddd,
            condition,
            least_squares: false,
            null_direction: None,
        });
    }

    // Singular mass matrix: accept the minimum-norm solution when the
    // system is consistent, as happens for reparametrization-invariant
    // radiative terms whose mass matrix annihilates the velocity.
    let sol = linalg::least_squares(&m, &rem);
    let scale = rem.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    if sol.residual > CONSISTENCY_TOL * scale {
        return Err(EomError::SingularDynamics {
            detail: format!(
                "mass matrix singular (condition {condition:.3e}) and the jerk system \
                 is inconsistent (residual {residual:.3e})",
                residual = sol.residual
            ),
        });
    }
    Ok(JerkOutcome {
        qddd: sol.x,
        condition,
        least_squares: true,
        null_direction: sol.null_direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, ParseContext};
    use crate::model::{compile, ModelSpec};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn e(src: &str, n: usize, params: &[&str]) -> Expression {
        let ctx = ParseContext::unconstrained(n).with_params(params.iter().copied());
        parse(src, &ctx).unwrap()
    }

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn free_particle(mass: f64) -> CompiledModel {
        let mut spec = ModelSpec::new(1);
        spec.lagrangian = e("0.5*m*qd0^2", 1, &["m"]);
        spec.params = params(&[("m", mass)]);
        compile(&spec).unwrap()
    }

    fn parabola() -> CompiledModel {
        let mut spec = ModelSpec::new(1);
        spec.lagrangian = e("0.5*m*(1+b^2*q0^2)*qd0^2", 1, &["m", "b"]);
        spec.rayleigh = e("mu*b*abs(qd0)^3", 1, &["mu", "b"]);
        spec.radiative = e(
            "-(qsq/6)*(qdd0^2*(1+b^2*q0^2)+b^2*qd0^4+2*b^2*q0*qd0^2*qdd0)",
            1,
            &["qsq", "b"],
        );
        spec.params = params(&[("m", 1.0), ("b", 1.0), ("mu", 0.1), ("qsq", 3.0)]);
        compile(&spec).unwrap()
    }

    #[test]
    fn x_of_free_particle() {
        let cm = free_particle(2.0);
        let state = JetState::third_order(0.0, vec![0.7], vec![-1.3], vec![3.0]);
        let x = eval_x(&cm, &state).unwrap();
        assert_eq!(x.kind, CovectorKind::EquationOfMotion);
        assert_relative_eq!(x.components[0], -6.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_jet_order_is_reported() {
        let cm = free_particle(2.0);
        let state = JetState::second_order(0.0, vec![0.7], vec![-1.3]);
        match eval_x(&cm, &state) {
            Err(EomError::MissingJetOrder { need: 2, have: 1 }) => {}
            other => panic!("expected missing jet order, got {other:?}"),
        }
    }

    #[test]
    fn y_vanishes_identically_for_the_free_particle() {
        let cm = free_particle(1.7);
        let y = cm.y_covector.as_ref().unwrap();
        assert!(y[0].is_zero());
    }

    #[test]
    fn y_is_rejected_on_constrained_models() {
        let mut spec = ModelSpec::new(2);
        spec.lagrangian = e("0.5*(qd0^2+qd1^2)", 2, &[]);
        spec.constraints = vec![e("qd1", 2, &[])];
        let cm = compile(&spec).unwrap();
        let state = JetState {
            t: 0.0,
            q: vec![0.0; 2],
            qd: vec![0.0; 2],
            qdd: vec![0.0; 2],
            qddd: vec![0.0; 2],
            qdddd: vec![0.0; 2],
            mu: vec![0.0],
        };
        assert!(matches!(
            eval_y(&cm, &state),
            Err(EomError::VariationalConstrained)
        ));
    }

    #[test]
    fn accel_solve_damped_oscillator() {
        let mut spec = ModelSpec::new(1);
        spec.lagrangian = e("0.5*m*qd0^2-0.5*k*q0^2", 1, &["m", "k"]);
        spec.rayleigh = e("0.5*gamma*qd0^2", 1, &["gamma"]);
        spec.params = params(&[("m", 1.0), ("k", 4.0), ("gamma", 0.2)]);
        let cm = compile(&spec).unwrap();
        let out = accel_solve(&cm, 0.0, &[1.0], &[0.0], 0.0).unwrap();
        assert_relative_eq!(out.qdd[0], -4.0, epsilon = 1e-12);
        assert!(out.mu.is_empty());
    }

    #[test]
    fn accel_solve_knife_edge_satisfies_the_constraint_row() {
        let mut spec = ModelSpec::new(3);
        spec.lagrangian = e("0.5*m*(qd0^2+qd1^2)+0.5*i*qd2^2", 3, &["m", "i"]);
        spec.constraints = vec![e("qd0*sin(q2)-qd1*cos(q2)", 3, &[])];
        spec.params = params(&[("m", 1.0), ("i", 1.0)]);
        let cm = compile(&spec).unwrap();
        let theta = std::f64::consts::FRAC_PI_4;
        // On-manifold state: velocity aligned with the heading, theta
        // turning at a constant rate.
        let q = vec![0.0, 0.0, theta];
        let qd = vec![theta.cos(), theta.sin(), 0.5];
        let out = accel_solve(&cm, 0.0, &q, &qd, 0.0).unwrap();
        // d f / dt = G qdd + drift must vanish.
        let drift = qd[2] * (qd[0] * theta.cos() + qd[1] * theta.sin());
        let g_qdd = out.qdd[0] * theta.sin() - out.qdd[1] * theta.cos();
        assert_relative_eq!(g_qdd + drift, 0.0, epsilon = 1e-10);
        // The completed jet annihilates X.
        let state = JetState {
            t: 0.0,
            q,
            qd,
            qdd: out.qdd.clone(),
            qddd: vec![0.0; 3],
            qdddd: vec![0.0; 3],
            mu: out.mu.clone(),
        };
        let x = eval_x(&cm, &state).unwrap();
        for v in x.components {
            assert_relative_eq!(v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn accel_solve_applies_constraint_stabilization() {
        let mut spec = ModelSpec::new(2);
        spec.lagrangian = e("0.5*(qd0^2+qd1^2)", 2, &[]);
        spec.constraints = vec![e("qd1", 2, &[])];
        let cm = compile(&spec).unwrap();
        // Off-manifold state: f = qd1 = 0.3; with beta = 5 the row demands
        // d f/dt = qdd1 = -beta f.
        let out = accel_solve(&cm, 0.0, &[0.0, 0.0], &[1.0, 0.3], 5.0).unwrap();
        assert_relative_eq!(out.qdd[1], -1.5, epsilon = 1e-12);
    }

    #[test]
    fn jerk_solve_parabola() {
        let cm = parabola();
        let out = jerk_solve(&cm, 0.0, &[1.0], &[1.0], &[0.0]).unwrap();
        assert!(!out.least_squares);
        assert_relative_eq!(out.qddd[0], 0.325, epsilon = 1e-12);
        // Completed jet annihilates X.
        let state = JetState {
            t: 0.0,
            q: vec![1.0],
            qd: vec![1.0],
            qdd: vec![0.0],
            qddd: out.qddd.clone(),
            qdddd: vec![],
            mu: vec![],
        };
        let x = eval_x(&cm, &state).unwrap();
        assert_relative_eq!(x.components[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn jerk_solve_runaway_rate() {
        // Free radiative particle: qddd = (3m / 2 qsq) qdd.
        let mut spec = ModelSpec::new(1);
        spec.lagrangian = e("0.5*m*qd0^2", 1, &["m"]);
        spec.radiative = e("-(qsq/6)*qdd0^2", 1, &["qsq"]);
        spec.params = params(&[("m", 1.0), ("qsq", 1.0)]);
        let cm = compile(&spec).unwrap();
        let out = jerk_solve(&cm, 0.0, &[0.0], &[0.0], &[0.4]).unwrap();
        assert_relative_eq!(out.qddd[0], 1.5 * 0.4, epsilon = 1e-12);
    }

    #[test]
    fn singular_consistent_jerk_takes_the_minimum_norm_solution() {
        // Rank-1 radiative coupling: M annihilates (1, -1); the system is
        // consistent exactly when qdd0 = qdd1.
        let mut spec = ModelSpec::new(2);
        spec.lagrangian = e("0.5*(qd0^2+qd1^2)", 2, &[]);
        spec.radiative = e("-(c/6)*(qdd0+qdd1)^2", 2, &["c"]);
        spec.params = params(&[("c", 1.0)]);
        let cm = compile(&spec).unwrap();

        let out = jerk_solve(&cm, 0.0, &[0.0; 2], &[0.0; 2], &[0.5, 0.5]).unwrap();
        assert!(out.least_squares);
        // -(2c/3)(jerk0 + jerk1) = -qdd0, split evenly by minimum norm.
        assert_relative_eq!(out.qddd[0], 0.375, epsilon = 1e-9);
        assert_relative_eq!(out.qddd[1], 0.375, epsilon = 1e-9);

        match jerk_solve(&cm, 0.0, &[0.0; 2], &[0.0; 2], &[0.5, -0.5]) {
            Err(EomError::SingularDynamics { detail }) => {
                assert!(detail.contains("inconsistent"), "{detail}");
            }
            other => panic!("expected singular dynamics, got {other:?}"),
        }
    }

    #[test]
    fn class_mismatch_is_rejected() {
        let cm = free_particle(1.0);
        assert!(matches!(
            jerk_solve(&cm, 0.0, &[0.0], &[0.0], &[0.0]),
            Err(EomError::WrongClass { .. })
        ));
        let cm = parabola();
        assert!(matches!(
            accel_solve(&cm, 0.0, &[0.0], &[0.0], 0.0),
            Err(EomError::WrongClass { .. })
        ));
    }
}
