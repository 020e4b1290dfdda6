//! Model declaration and compilation.
//!
//! A [`ModelSpec`] lists the physical ingredients: a first-order Lagrangian,
//! a Rayleigh dissipation function, velocity constraints, a radiative
//! correction of jet order two, and residual forces on configuration space.
//! [`compile`] folds numeric parameters into the trees, assembles the power
//! function
//!
//! ```text
//! P = dL/dt - R + lamd_a * f_a + P_E + Q_k * qd_k
//! ```
//!
//! derives every table the solvers need (equation-of-motion covector, mass
//! matrix, energy, balance right-hand side, constraint Jacobians), and
//! classifies the system by differential order. Compiled tables contain jet
//! symbols only; parameter names are gone after folding.

use crate::expr::{
    normalize, normalize_poly, partial, total_time_derivative, Expression, Symbol,
};
use crate::linalg;
use crate::sample::{finite_jets, rng_for, SampleBox};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Random jet probes drawn for order classification and the constraint rank
/// test.
pub const PROBE_COUNT: usize = 20;
/// A mass-matrix entry above this magnitude at any probe marks the model as
/// third order.
pub const CLASSIFY_TOL: f64 = 1e-12;
/// Smallest acceptable singular value of the constraint velocity Jacobian
/// over the probe set.
pub const RANK_TOL: f64 = 1e-10;

/// Differential order of the compiled equations of motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderClass {
    SecondOrder,
    SecondOrderConstrained,
    ThirdOrder,
}

impl OrderClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderClass::SecondOrder => "second_order",
            OrderClass::SecondOrderConstrained => "second_order_constrained",
            OrderClass::ThirdOrder => "third_order",
        }
    }
}

impl fmt::Display for OrderClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Declarative description of a dynamical model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Number of configuration coordinates.
    pub n: usize,
    /// Display labels, one per coordinate.
    pub coords: Vec<String>,
    /// Named parameter values, folded into the trees at compile time.
    pub params: BTreeMap<String, f64>,
    /// Lagrangian, jet order at most one.
    pub lagrangian: Expression,
    /// Rayleigh dissipation function, jet order at most one.
    pub rayleigh: Expression,
    /// Velocity constraint rows `f_a(t, q, qd) = 0`, jet order at most one.
    pub constraints: Vec<Expression>,
    /// Radiative correction, jet order at most two.
    pub radiative: Expression,
    /// Residual force components over `(t, q)` only; empty or length `n`.
    pub residual_forces: Vec<Expression>,
    /// Gauge condition `g(t, q, qd, qdd)`, jet order at most two. A
    /// degree-zero homogeneous radiative term makes the mass matrix
    /// singular along the velocity, leaving one jerk component free; the
    /// integrator spends that freedom holding `g` at its initial value.
    /// Requires a third-order model.
    pub gauge: Option<Expression>,
    /// When set, every `sgn` in the derived tables becomes `tanh(u / eps)`.
    pub regularize_sgn: Option<f64>,
    /// Declares the radiative term invariant under `(qd, qdd) ->
    /// (s*qd, s^2*qdd)`; enables the homogeneity check.
    pub homogeneous: bool,
}

impl ModelSpec {
    /// Empty model over `n` coordinates with default labels `q0..`.
    pub fn new(n: usize) -> Self {
        ModelSpec {
            n,
            coords: (0..n).map(|i| format!("q{i}")).collect(),
            params: BTreeMap::new(),
            lagrangian: Expression::zero(),
            rayleigh: Expression::zero(),
            constraints: Vec::new(),
            radiative: Expression::zero(),
            residual_forces: Vec::new(),
            gauge: None,
            regularize_sgn: None,
            homogeneous: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("model needs at least one coordinate")]
    EmptyModel,
    #[error("{count} coordinate labels for {n} coordinates")]
    CoordLabelCount { count: usize, n: usize },
    #[error("{count} residual force components for {n} coordinates")]
    ResidualCount { count: usize, n: usize },
    #[error("more constraints ({m}) than coordinates ({n})")]
    TooManyConstraints { m: usize, n: usize },
    #[error("{ingredient} refers to coordinate {index} but the model has {n}")]
    UnknownCoordinate {
        ingredient: String,
        index: usize,
        n: usize,
    },
    #[error("{ingredient} may use derivatives up to order {cap}, found order {found}")]
    OrderCap {
        ingredient: String,
        cap: u8,
        found: u8,
    },
    #[error("{ingredient} must not reference constraint multipliers")]
    MultiplierInIngredient { ingredient: String },
    #[error("parameter `{name}` in {ingredient} has no bound value")]
    UnboundParameter { ingredient: String, name: String },
    #[error("parameter `{name}` is not finite")]
    BadParameterValue { name: String },
    #[error("a radiative term cannot be combined with constraints")]
    RadiativeWithConstraints,
    #[error("a gauge condition needs a third-order model")]
    GaugeOnSecondOrder,
    #[error(
        "constraint velocity Jacobian is rank-deficient at every probe \
         (best smallest singular value {sigma:.3e})"
    )]
    RankDeficient { sigma: f64 },
    #[error("could not find enough finite sample points to classify the model")]
    ProbeDomain,
}

/// A model with parameters folded, tables derived, and order classified.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    spec: ModelSpec,
    pub n: usize,
    /// Number of constraint rows.
    pub m: usize,
    pub class: OrderClass,
    /// The assembled power function `P`.
    pub power: Expression,
    /// Lagrangian with parameters folded.
    pub lagrangian: Expression,
    /// `F = P - dL/dt`, the non-Lagrangian part of the power.
    pub free_part: Expression,
    /// Constraint rows with parameters folded.
    pub constraints: Vec<Expression>,
    /// `dP/dqdd_k`; reduces to the momentum `dL/dqd_k + dP_E/dqdd_k`.
    pub momentum: Vec<Expression>,
    /// Equation-of-motion covector `X_k = dP/dqd_k - 2 d/dt dP/dqdd_k`.
    pub x_covector: Vec<Expression>,
    /// Variational covector `Y_k`; only defined without constraints.
    pub y_covector: Option<Vec<Expression>>,
    /// Energy function `U = 2 dF/dqdd . qd + dL/dqd . qd - L`.
    pub energy: Expression,
    /// On-shell value of `dU/dt`.
    pub balance_rhs: Expression,
    /// Mass matrix `M_kj = 2 d2P/dqdd_k dqdd_j`.
    pub mass: Vec<Vec<Expression>>,
    // Second-order affine split X = A.qdd + B.mu + c, evaluated at
    // qdd = mu = 0 so the entries only need jets through order one.
    pub(crate) accel_a: Vec<Vec<Expression>>,
    pub(crate) accel_b: Vec<Vec<Expression>>,
    pub(crate) accel_c: Vec<Expression>,
    // Third-order remainder X restricted to qddd = 0.
    pub(crate) jerk_rem: Vec<Expression>,
    // df_a/dqd_j and the qdd-free part of d(f_a)/dt.
    pub(crate) constraint_vel_jac: Vec<Vec<Expression>>,
    pub(crate) constraint_drift: Vec<Expression>,
    // Gauge scalar tables when the model declares one.
    pub(crate) gauge: Option<GaugeTables>,
}

/// Derived tables for the gauge condition: the scalar itself, its total
/// time derivative restricted to `qddd = 0`, and its gradient in `qdd`.
/// Together they give `dg/dt = rate_rem + accel_grad . qddd` so the
/// integrator can pick the free jerk component that keeps `g` constant.
#[derive(Debug, Clone)]
pub(crate) struct GaugeTables {
    pub(crate) value: Expression,
    pub(crate) rate_rem: Expression,
    pub(crate) accel_grad: Vec<Expression>,
}

impl CompiledModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// The `sgn` smoothing width, when the model asked for one.
    pub fn regularization(&self) -> Option<f64> {
        self.spec.regularize_sgn
    }

    /// Applies this model's `sgn` smoothing to a freshly derived expression
    /// so it matches the stored tables.
    pub fn apply_regularization(&self, e: &Expression) -> Expression {
        match self.spec.regularize_sgn {
            Some(eps) => e.regularize_sgn(eps),
            None => e.clone(),
        }
    }
}

fn check_ingredient(
    label: &str,
    e: &Expression,
    cap: u8,
    n: usize,
    params: &BTreeMap<String, f64>,
) -> Result<(), CompileError> {
    for sym in e.free_symbols() {
        match sym {
            Symbol::Coord { index, order } => {
                if index >= n {
                    return Err(CompileError::UnknownCoordinate {
                        ingredient: label.to_string(),
                        index,
                        n,
                    });
                }
                if order > cap {
                    return Err(CompileError::OrderCap {
                        ingredient: label.to_string(),
                        cap,
                        found: order,
                    });
                }
            }
            Symbol::Multiplier { .. } => {
                return Err(CompileError::MultiplierInIngredient {
                    ingredient: label.to_string(),
                })
            }
            Symbol::Parameter(name) => {
                if !params.contains_key(&name) {
                    return Err(CompileError::UnboundParameter {
                        ingredient: label.to_string(),
                        name,
                    });
                }
            }
            Symbol::Time => {}
        }
    }
    Ok(())
}

fn validate(spec: &ModelSpec) -> Result<(), CompileError> {
    if spec.n == 0 {
        return Err(CompileError::EmptyModel);
    }
    if spec.coords.len() != spec.n {
        return Err(CompileError::CoordLabelCount {
            count: spec.coords.len(),
            n: spec.n,
        });
    }
    if !spec.residual_forces.is_empty() && spec.residual_forces.len() != spec.n {
        return Err(CompileError::ResidualCount {
            count: spec.residual_forces.len(),
            n: spec.n,
        });
    }
    if spec.constraints.len() > spec.n {
        return Err(CompileError::TooManyConstraints {
            m: spec.constraints.len(),
            n: spec.n,
        });
    }
    for (name, value) in &spec.params {
        if !value.is_finite() {
            return Err(CompileError::BadParameterValue { name: name.clone() });
        }
    }
    check_ingredient("the Lagrangian", &spec.lagrangian, 1, spec.n, &spec.params)?;
    check_ingredient(
        "the Rayleigh function",
        &spec.rayleigh,
        1,
        spec.n,
        &spec.params,
    )?;
    for (a, f) in spec.constraints.iter().enumerate() {
        check_ingredient(&format!("constraint {a}"), f, 1, spec.n, &spec.params)?;
    }
    check_ingredient(
        "the radiative term",
        &spec.radiative,
        2,
        spec.n,
        &spec.params,
    )?;
    if let Some(g) = &spec.gauge {
        check_ingredient("the gauge condition", g, 2, spec.n, &spec.params)?;
    }
    for (k, q) in spec.residual_forces.iter().enumerate() {
        check_ingredient(
            &format!("residual force {k}"),
            q,
            0,
            spec.n,
            &spec.params,
        )?;
    }
    Ok(())
}

fn param_fold_map(params: &BTreeMap<String, f64>) -> BTreeMap<Symbol, Expression> {
    params
        .iter()
        .map(|(name, value)| (Symbol::parameter(name.clone()), Expression::constant(*value)))
        .collect()
}

struct PowerParts {
    power: Expression,
    free_part: Expression,
}

/// Builds `P = dL/dt - R + lamd_a f_a + P_E + Q_k qd_k` from ingredient
/// trees, which may or may not have parameters folded in.
fn assemble_power(
    lagrangian: &Expression,
    rayleigh: &Expression,
    constraints: &[Expression],
    radiative: &Expression,
    residuals: &[Expression],
) -> PowerParts {
    const IN_VOCAB: &str = "validated jet orders keep derivatives within the vocabulary";
    let dl = total_time_derivative(lagrangian).expect(IN_VOCAB);
    let mut free_terms: Vec<Expression> = Vec::new();
    if !rayleigh.is_zero() {
        free_terms.push(rayleigh.neg());
    }
    for (a, f) in constraints.iter().enumerate() {
        free_terms.push(Expression::product(vec![
            Expression::multiplier(a, 1),
            f.clone(),
        ]));
    }
    if !radiative.is_zero() {
        free_terms.push(radiative.clone());
    }
    for (k, q) in residuals.iter().enumerate() {
        if !q.is_zero() {
            free_terms.push(Expression::product(vec![q.clone(), Expression::coord(k, 1)]));
        }
    }
    let free_part = if free_terms.is_empty() {
        Expression::zero()
    } else {
        normalize(&Expression::sum(free_terms))
    };
    let power = normalize(&Expression::sum(vec![dl, free_part.clone()]));
    PowerParts { power, free_part }
}

/// Covector `X_k` with parameter names kept and without `sgn` smoothing,
/// in the polynomial normal form, for printing derived equations. The
/// motion satisfies `X_k = 0`; regularization is an integration-time
/// substitute, not part of the model.
pub fn symbolic_covector(spec: &ModelSpec) -> Result<Vec<Expression>, CompileError> {
    validate(spec)?;
    const IN_VOCAB: &str = "validated jet orders keep derivatives within the vocabulary";
    let parts = assemble_power(
        &spec.lagrangian,
        &spec.rayleigh,
        &spec.constraints,
        &spec.radiative,
        &spec.residual_forces,
    );
    Ok((0..spec.n)
        .map(|k| {
            let mom = normalize(&partial(&parts.power, &Symbol::coord(k, 2)));
            let d_mom = total_time_derivative(&mom).expect(IN_VOCAB);
            normalize_poly(&Expression::sum(vec![
                partial(&parts.power, &Symbol::coord(k, 1)),
                Expression::product(vec![Expression::constant(-2.0), d_mom]),
            ]))
        })
        .collect())
}

pub fn compile(spec: &ModelSpec) -> Result<CompiledModel, CompileError> {
    validate(spec)?;
    let n = spec.n;
    let m = spec.constraints.len();
    const IN_VOCAB: &str = "validated jet orders keep derivatives within the vocabulary";

    let fold = param_fold_map(&spec.params);
    let folded = |e: &Expression| normalize(&e.substitute(&fold));
    let lagrangian = folded(&spec.lagrangian);
    let rayleigh = folded(&spec.rayleigh);
    let constraints: Vec<Expression> = spec.constraints.iter().map(&folded).collect();
    let radiative = folded(&spec.radiative);
    let residuals: Vec<Expression> = spec.residual_forces.iter().map(&folded).collect();

    // Smoothing applies to derived tables, where differentiation of abs
    // introduces sgn factors; the declarative trees stay exact.
    let reg = |e: &Expression| match spec.regularize_sgn {
        Some(eps) => normalize(&e.regularize_sgn(eps)),
        None => e.clone(),
    };
    let table = |e: &Expression| reg(&normalize_poly(e));

    let PowerParts { power, free_part } =
        assemble_power(&lagrangian, &rayleigh, &constraints, &radiative, &residuals);

    let momentum: Vec<Expression> = (0..n)
        .map(|k| normalize(&partial(&power, &Symbol::coord(k, 2))))
        .collect();

    let x_covector: Vec<Expression> = (0..n)
        .map(|k| {
            let d_mom = total_time_derivative(&momentum[k]).expect(IN_VOCAB);
            table(&Expression::sum(vec![
                partial(&power, &Symbol::coord(k, 1)),
                Expression::product(vec![Expression::constant(-2.0), d_mom]),
            ]))
        })
        .collect();

    let mut mass = vec![vec![Expression::zero(); n]; n];
    for k in 0..n {
        for j in k..n {
            let entry = table(&Expression::product(vec![
                Expression::constant(2.0),
                partial(&momentum[k], &Symbol::coord(j, 2)),
            ]));
            mass[k][j] = entry.clone();
            mass[j][k] = entry;
        }
    }

    let constraint_vel_jac: Vec<Vec<Expression>> = constraints
        .iter()
        .map(|f| {
            (0..n)
                .map(|j| reg(&normalize(&partial(f, &Symbol::coord(j, 1)))))
                .collect()
        })
        .collect();
    let constraint_drift: Vec<Expression> = constraints
        .iter()
        .map(|f| {
            let mut terms = vec![partial(f, &Symbol::Time)];
            for j in 0..n {
                terms.push(Expression::product(vec![
                    partial(f, &Symbol::coord(j, 0)),
                    Expression::coord(j, 1),
                ]));
            }
            reg(&normalize(&Expression::sum(terms)))
        })
        .collect();

    // Order classification: probe the mass matrix at seeded random jets.
    let mut probe_filter: Vec<Expression> = vec![power.clone()];
    probe_filter.extend(mass.iter().flatten().cloned());
    probe_filter.extend(constraint_vel_jac.iter().flatten().cloned());
    let mut rng = rng_for(0, "compile-probes");
    let probes = finite_jets(
        &mut rng,
        n,
        m,
        2,
        SampleBox::default(),
        &probe_filter,
        PROBE_COUNT,
    );
    if probes.len() < PROBE_COUNT {
        return Err(CompileError::ProbeDomain);
    }
    let mut third = false;
    'outer: for b in &probes {
        for row in &mass {
            for e in row {
                let v = e.eval(b).map_err(|_| CompileError::ProbeDomain)?;
                if v.abs() > CLASSIFY_TOL {
                    third = true;
                    break 'outer;
                }
            }
        }
    }
    let class = match (third, m > 0) {
        (true, true) => return Err(CompileError::RadiativeWithConstraints),
        (true, false) => OrderClass::ThirdOrder,
        (false, true) => OrderClass::SecondOrderConstrained,
        (false, false) => OrderClass::SecondOrder,
    };
    if spec.gauge.is_some() && class != OrderClass::ThirdOrder {
        return Err(CompileError::GaugeOnSecondOrder);
    }

    if m > 0 {
        let mut best = 0.0_f64;
        for b in &probes {
            let rows: Vec<Vec<f64>> = constraint_vel_jac
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|e| e.eval(b).unwrap_or(f64::NAN))
                        .collect::<Vec<f64>>()
                })
                .collect();
            if rows.iter().flatten().all(|v| v.is_finite()) {
                best = best.max(linalg::smallest_singular_value(&rows));
            }
        }
        if best <= RANK_TOL {
            return Err(CompileError::RankDeficient { sigma: best });
        }
    }

    let y_covector = if m == 0 {
        Some(
            (0..n)
                .map(|k| {
                    let p_q = partial(&power, &Symbol::coord(k, 0));
                    let d_pqd =
                        total_time_derivative(&partial(&power, &Symbol::coord(k, 1)))
                            .expect(IN_VOCAB);
                    let d2_mom = total_time_derivative(
                        &total_time_derivative(&momentum[k]).expect(IN_VOCAB),
                    )
                    .expect(IN_VOCAB);
                    table(&Expression::sum(vec![p_q, d_pqd.neg(), d2_mom]))
                })
                .collect(),
        )
    } else {
        None
    };

    let mut energy_terms: Vec<Expression> = Vec::new();
    let mut balance_terms: Vec<Expression> = Vec::new();
    for k in 0..n {
        let qd = Expression::coord(k, 1);
        let qdd = Expression::coord(k, 2);
        let df_qdd = partial(&free_part, &Symbol::coord(k, 2));
        let df_qd = partial(&free_part, &Symbol::coord(k, 1));
        let dl_qd = partial(&lagrangian, &Symbol::coord(k, 1));
        if !df_qdd.is_zero() {
            energy_terms.push(Expression::product(vec![
                Expression::constant(2.0),
                df_qdd.clone(),
                qd.clone(),
            ]));
            balance_terms.push(Expression::product(vec![
                Expression::constant(2.0),
                df_qdd,
                qdd,
            ]));
        }
        if !dl_qd.is_zero() {
            energy_terms.push(Expression::product(vec![dl_qd, qd.clone()]));
        }
        if !df_qd.is_zero() {
            balance_terms.push(Expression::product(vec![df_qd, qd]));
        }
    }
    energy_terms.push(lagrangian.neg());
    let dl_t = partial(&lagrangian, &Symbol::Time);
    if !dl_t.is_zero() {
        balance_terms.push(dl_t.neg());
    }
    let energy = reg(&normalize(&Expression::sum(energy_terms)));
    let balance_rhs = if balance_terms.is_empty() {
        Expression::zero()
    } else {
        reg(&normalize(&Expression::sum(balance_terms)))
    };

    // Solver tables. Second order: affine split of X in (qdd, mu). Third
    // order: X = -M.qddd + rem.
    let mut accel_a = Vec::new();
    let mut accel_b = Vec::new();
    let mut accel_c = Vec::new();
    let mut jerk_rem = Vec::new();
    let mut gauge = None;
    match class {
        OrderClass::ThirdOrder => {
            let mut zero_jerk = BTreeMap::new();
            for j in 0..n {
                zero_jerk.insert(Symbol::coord(j, 3), Expression::zero());
            }
            jerk_rem = x_covector
                .iter()
                .map(|xk| table(&xk.substitute(&zero_jerk)))
                .collect();
            if let Some(g) = &spec.gauge {
                let g = folded(g);
                let dg = total_time_derivative(&g).expect(IN_VOCAB);
                gauge = Some(GaugeTables {
                    rate_rem: table(&dg.substitute(&zero_jerk)),
                    accel_grad: (0..n)
                        .map(|k| table(&partial(&g, &Symbol::coord(k, 2))))
                        .collect(),
                    value: table(&g),
                });
            }
        }
        OrderClass::SecondOrder | OrderClass::SecondOrderConstrained => {
            let mut zero_high = BTreeMap::new();
            for j in 0..n {
                zero_high.insert(Symbol::coord(j, 2), Expression::zero());
                zero_high.insert(Symbol::coord(j, 3), Expression::zero());
            }
            for a in 0..m {
                zero_high.insert(Symbol::multiplier(a, 0), Expression::zero());
                zero_high.insert(Symbol::multiplier(a, 1), Expression::zero());
            }
            for xk in &x_covector {
                accel_a.push(
                    (0..n)
                        .map(|j| {
                            table(&partial(xk, &Symbol::coord(j, 2)).substitute(&zero_high))
                        })
                        .collect::<Vec<_>>(),
                );
                accel_b.push(
                    (0..m)
                        .map(|a| {
                            table(&partial(xk, &Symbol::multiplier(a, 1)).substitute(&zero_high))
                        })
                        .collect::<Vec<_>>(),
                );
                accel_c.push(table(&xk.substitute(&zero_high)));
            }
        }
    }

    Ok(CompiledModel {
        spec: spec.clone(),
        n,
        m,
        class,
        power,
        lagrangian,
        free_part,
        constraints,
        momentum,
        x_covector,
        y_covector,
        energy,
        balance_rhs,
        mass,
        accel_a,
        accel_b,
        accel_c,
        jerk_rem,
        constraint_vel_jac,
        constraint_drift,
        gauge,
    })
}
