//! Momentum-space form of the dissipative dynamics.
//!
//! The acceleration-conjugate momenta `p_k = dP/dqdd_k` admit a Legendre
//! partner `W(t, q, qd, p) = p . qdd - P` whenever the acceleration Hessian
//! of `P` is nonsingular. In these coordinates the equations of motion
//! become first order, `d qd/dt = dW/dp` and `dp/dt = -1/2 dW/dqd`; the
//! half spoils the symplectic structure, so this is a genuinely different
//! flow from a Hamiltonian one, not a change of charts.
//!
//! [`legendre_w`] inverts the momentum map numerically, [`canonical_rhs`]
//! evaluates the momentum-space vector field through the envelope
//! identities, and [`spectrum_wn`] tabulates the inverted-oscillator ladder
//! of dissipated-power gaps for the one-dimensional bremsstrahlung model.

use crate::eom::COND_LIMIT;
use crate::expr::{partial, Binding, EvalError, Symbol};
use crate::linalg;
use crate::model::{CompiledModel, OrderClass};
use std::f64::consts::PI;
use thiserror::Error;

/// Residual bound `|dP/dqdd - p| <= NEWTON_TOL * max(1, |p|)` for accepting
/// a momentum inversion.
pub const NEWTON_TOL: f64 = 1e-12;
/// Iteration ceiling for the momentum inversion.
pub const NEWTON_MAX_ITERS: usize = 50;

/// Point of the momentum-space phase space: time, coordinates, velocities,
/// and acceleration-conjugate momenta, all length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreState {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub p: Vec<f64>,
}

/// Inputs of the bremsstrahlung ladder: viscous coefficient, radiative
/// coefficient, the action-frequency product entering the commutation rule,
/// the initial momentum, and elapsed time. Build through [`SpectrumParams::
/// new`], which enforces the sign constraints the closed form needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumParams {
    pub gamma_viscous: f64,
    pub mu_radiative: f64,
    pub hbar_lambda: f64,
    pub p0: f64,
    pub t: f64,
}

impl SpectrumParams {
    pub fn new(
        gamma_viscous: f64,
        mu_radiative: f64,
        hbar_lambda: f64,
        p0: f64,
        t: f64,
    ) -> Result<Self, QuantizeError> {
        let sp = SpectrumParams {
            gamma_viscous,
            mu_radiative,
            hbar_lambda,
            p0,
            t,
        };
        let bad = |what: &str| {
            Err(QuantizeError::BadSpectrumParams {
                detail: what.to_string(),
            })
        };
        if !(gamma_viscous > 0.0 && gamma_viscous.is_finite()) {
            return bad("viscous coefficient must be positive");
        }
        if !(mu_radiative > 0.0 && mu_radiative.is_finite()) {
            return bad("radiative coefficient must be positive");
        }
        if !(hbar_lambda > 0.0 && hbar_lambda.is_finite()) {
            return bad("hbar*Lambda must be positive");
        }
        if !(p0 != 0.0 && p0.is_finite()) {
            return bad("initial momentum must be nonzero");
        }
        if !(t >= 0.0 && t.is_finite()) {
            return bad("time must be nonnegative");
        }
        Ok(sp)
    }

    /// Decay frequency `omega = 1 / (sqrt(gamma mu) hbar Lambda)`.
    pub fn omega(&self) -> f64 {
        1.0 / ((self.gamma_viscous * self.mu_radiative).sqrt() * self.hbar_lambda)
    }
}

#[derive(Debug, Error)]
pub enum QuantizeError {
    #[error("momentum-space operations need a third-order model, this one is {class}")]
    WrongClass { class: OrderClass },
    #[error("state carries {have} components, model has {need}")]
    Dimension { need: usize, have: usize },
    #[error("acceleration Hessian is singular along the inversion path (condition {condition:.3e})")]
    SingularHessian { condition: f64 },
    #[error(
        "momentum inversion did not converge in {iterations} iterations \
         (residual {residual:.3e})"
    )]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("spectrum parameters invalid: {detail}")]
    BadSpectrumParams { detail: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn base_binding(s: &LegendreState, n: usize) -> Binding {
    let mut b = Binding::new().with(Symbol::Time, s.t);
    for k in 0..n {
        b = b
            .with(Symbol::coord(k, 0), s.q[k])
            .with(Symbol::coord(k, 1), s.qd[k]);
    }
    b
}

fn with_qdd(base: &Binding, qdd: &[f64]) -> Binding {
    let mut b = base.clone();
    for (k, v) in qdd.iter().enumerate() {
        b = b.with(Symbol::coord(k, 2), *v);
    }
    b
}

/// Legendre transform of the power function in the accelerations.
///
/// Newton-inverts `dP/dqdd = p` for `qdd`, starting from zero, and returns
/// `W = p . qdd - P` together with the recovered acceleration. The Newton
/// Jacobian is half the mass matrix, so a singular mass matrix is reported
/// as a singular Hessian rather than ground through the iteration.
pub fn legendre_w(
    cm: &CompiledModel,
    s: &LegendreState,
) -> Result<(f64, Vec<f64>), QuantizeError> {
    if cm.class != OrderClass::ThirdOrder {
        return Err(QuantizeError::WrongClass { class: cm.class });
    }
    let n = cm.n;
    if s.q.len() != n || s.qd.len() != n || s.p.len() != n {
        return Err(QuantizeError::Dimension {
            need: n,
            have: s.q.len().min(s.qd.len()).min(s.p.len()),
        });
    }
    let base = base_binding(s, n);
    let scale = s
        .p
        .iter()
        .fold(1.0_f64, |m, v| m.max(v.abs()));

    let mut qdd = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITERS {
        let b = with_qdd(&base, &qdd);
        let mut f = Vec::with_capacity(n);
        for (k, mom) in cm.momentum.iter().enumerate() {
            f.push(mom.eval_memo(&b)? - s.p[k]);
        }
        residual = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if residual <= NEWTON_TOL * scale {
            let w_val = s.p.iter().zip(&qdd).map(|(p, a)| p * a).sum::<f64>()
                - cm.power.eval_memo(&b)?;
            return Ok((w_val, qdd));
        }
        // Jacobian d(dP/dqdd_k)/dqdd_j = mass_kj / 2.
        let mut jac = vec![vec![0.0; n]; n];
        for k in 0..n {
            for j in 0..n {
                jac[k][j] = 0.5 * cm.mass[k][j].eval_memo(&b)?;
            }
        }
        let condition = linalg::condition_number(&jac);
        if !condition.is_finite() || condition > COND_LIMIT {
            return Err(QuantizeError::SingularHessian { condition });
        }
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let step = linalg::solve(&jac, &rhs).ok_or(QuantizeError::SingularHessian {
            condition,
        })?;
        for (a, d) in qdd.iter_mut().zip(&step) {
            *a += d;
        }
    }
    Err(QuantizeError::NewtonDiverged {
        iterations: NEWTON_MAX_ITERS,
        residual,
    })
}

/// Momentum-space vector field at `s`: `d qd/dt` and `dp/dt`.
#[derive(Debug, Clone)]
pub struct CanonicalRhs {
    /// `d qd_k/dt = dW/dp_k`, which the envelope identity reduces to the
    /// recovered acceleration.
    pub qdd: Vec<f64>,
    /// `dp_k/dt = -1/2 dW/dqd_k = +1/2 dP/dqd_k` at the recovered jet.
    pub pdot: Vec<f64>,
}

/// Evaluates the modified canonical equations at `s`.
///
/// `W` enters only through its partials, and both reduce to power-function
/// data at the inverted acceleration: `dW/dp = qdd` and `dW/dqd = -dP/dqd`,
/// because the explicit `qdd(qd, p)` sensitivities cancel against the
/// Legendre stationarity condition.
pub fn canonical_rhs(cm: &CompiledModel, s: &LegendreState) -> Result<CanonicalRhs, QuantizeError> {
    let (_, qdd) = legendre_w(cm, s)?;
    let b = with_qdd(&base_binding(s, cm.n), &qdd);
    let mut pdot = Vec::with_capacity(cm.n);
    for k in 0..cm.n {
        let dp_dqd = partial(&cm.power, &Symbol::coord(k, 1));
        pdot.push(0.5 * dp_dqd.eval_memo(&b)?);
    }
    Ok(CanonicalRhs { qdd, pdot })
}

/// Dissipated-power gap `W_n` of the one-dimensional bremsstrahlung model
/// with negligible mass: `W_n = 3/2 gamma (hbar Lambda)^2 e^(-4 omega t)
/// pi^2 n^2 / p0^2`. The gaps shrink exponentially as the reachable
/// acceleration grows.
pub fn spectrum_wn(sp: &SpectrumParams, n: u32) -> f64 {
    let envelope = 1.5 * sp.gamma_viscous * sp.hbar_lambda * sp.hbar_lambda
        * (-4.0 * sp.omega() * sp.t).exp();
    envelope * (PI * f64::from(n) / sp.p0).powi(2)
}
