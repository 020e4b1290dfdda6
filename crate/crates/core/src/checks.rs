//! Structural certification checks: the pure-Lagrangian reduction identity,
//! chart covariance of the motion covector, degree-zero scaling of radiative
//! terms, and windowed variational consistency. Every check is driven by a
//! seeded stream and reports its worst sample as a re-evaluable witness.

use crate::eom::JetState;
use crate::expr::{
    normalize, parse, partial, total_time_derivative, Binding, DeriveError, EvalError, Expression,
    ParseContext, ParseError, Symbol,
};
use crate::model::CompiledModel;
use crate::sample::{rng_for, JetBox};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Forward/inverse chart pairs must agree to this over their domain box.
pub const CHART_ROUNDTRIP_TOL: f64 = 1e-10;
/// Reduction identity: exact up to rounding in big derivative trees.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Covariance tolerates chart-conditioned rounding amplification.
pub const COVARIANCE_TOL: f64 = 1e-8;
/// Scaling invariance is algebraically exact for degree-zero terms.
pub const HOMOGENEITY_TOL: f64 = 1e-12;
/// Variational windows carry O(window) truncation, so this is loose.
pub const VARIATIONAL_TOL: f64 = 0.05;
/// Jet pushforward composition agreement.
pub const FUNCTORIAL_TOL: f64 = 1e-9;

const ROUNDTRIP_POINTS: usize = 100;
const SAMPLE_BUDGET_FACTOR: usize = 50;
const VARIATIONAL_NODES: usize = 401;
// Small enough that the quadratic remainder, which carries the bump's
// O(1/halfwidth³) derivative norms, stays far below the 5% tolerance.
const VARIATIONAL_AMPLITUDE: f64 = 1e-7;
const HOMOGENEITY_SCALES: [f64; 3] = [0.5, 2.0, 3.7];

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("chart `{name}`: expected {expected} forward and inverse components, got {got}")]
    ChartShape {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("chart `{name}`: component depends on {symbol}, charts may only use t and q")]
    ChartVocabulary { name: String, symbol: String },
    #[error(
        "chart `{name}`: forward/inverse round-trip deviates by {worst:.3e} \
         (tolerance {CHART_ROUNDTRIP_TOL:.1e}) at {witness}"
    )]
    ChartRoundTrip {
        name: String,
        worst: f64,
        witness: Binding,
    },
    #[error("check `{check}`: only {got} of {want} samples were finite in the domain box")]
    ThinSample {
        check: String,
        got: usize,
        want: usize,
    },
    #[error("variational check needs the unconstrained variational covector; model has constraints")]
    VariationalConstrained,
    #[error("variational window is bad: {detail}")]
    BadWindow { detail: String },
    #[error("dimension mismatch: {detail}")]
    Dimension { detail: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Derive(#[from] DeriveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Outcome of one check run. `pass` is exactly `max_deviation <= tolerance`;
/// the witness is the sampled binding that produced the maximum, so a report
/// can be re-verified by evaluating the checked identity at the witness.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub witness: Option<Binding>,
}

impl CheckReport {
    fn new(name: &str, samples: usize, tolerance: f64, worst: Worst) -> Self {
        CheckReport {
            name: name.to_string(),
            samples,
            max_deviation: worst.deviation,
            tolerance,
            pass: worst.deviation <= tolerance,
            witness: worst.witness,
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (max deviation {:.3e}, tolerance {:.1e}, {} samples)",
            self.name,
            if self.pass { "pass" } else { "FAIL" },
            self.max_deviation,
            self.tolerance,
            self.samples,
        )
    }
}

/// Running maximum that treats NaN as worse than anything seen so far.
struct Worst {
    deviation: f64,
    witness: Option<Binding>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            deviation: 0.0,
            witness: None,
        }
    }

    fn observe(&mut self, deviation: f64, binding: &Binding) {
        if !(deviation <= self.deviation) {
            self.deviation = deviation;
            self.witness = Some(binding.clone());
        }
    }
}

/// Deviation of `lhs` from `rhs` relative to `max(1, |lhs|, |rhs|)`, so
/// absolute near zero and relative at large magnitudes.
pub fn relative_deviation(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / 1.0_f64.max(lhs.abs()).max(rhs.abs())
}

/// Invertible time-dependent point map `q̃ = φ(t, q)`. Both directions are
/// written over the same symbol slots: in `forward` the coordinates mean the
/// source chart, in `inverse` they mean the target chart. Construction
/// validates the round trip over the domain box.
#[derive(Debug, Clone)]
pub struct ChartMap {
    pub name: String,
    pub forward: Vec<Expression>,
    pub inverse: Vec<Expression>,
    pub domain: JetBox,
}

impl ChartMap {
    pub fn new(
        name: &str,
        forward: Vec<Expression>,
        inverse: Vec<Expression>,
        domain: JetBox,
    ) -> Result<ChartMap, CheckError> {
        let n = domain.n();
        if forward.len() != n || inverse.len() != n {
            return Err(CheckError::ChartShape {
                name: name.to_string(),
                expected: n,
                got: forward.len().min(inverse.len()),
            });
        }
        for component in forward.iter().chain(inverse.iter()) {
            for sym in component.free_symbols() {
                let ok = matches!(sym, Symbol::Time | Symbol::Coord { order: 0, .. });
                if !ok {
                    return Err(CheckError::ChartVocabulary {
                        name: name.to_string(),
                        symbol: sym.to_string(),
                    });
                }
            }
        }
        let chart = ChartMap {
            name: name.to_string(),
            forward,
            inverse,
            domain,
        };
        chart.validate_roundtrip()?;
        Ok(chart)
    }

    pub fn n(&self) -> usize {
        self.forward.len()
    }

    fn validate_roundtrip(&self) -> Result<(), CheckError> {
        let mut rng = rng_for(0, &format!("chart-roundtrip-{}", self.name));
        let mut worst = Worst::new();
        for _ in 0..ROUNDTRIP_POINTS {
            let point = self.domain.sample(&mut rng, 0);
            let mut image = point.clone();
            for (j, fwd) in self.forward.iter().enumerate() {
                image.set(Symbol::coord(j, 0), fwd.eval(&point)?);
            }
            for (k, inv) in self.inverse.iter().enumerate() {
                let back = inv.eval(&image)?;
                let orig = point.get(&Symbol::coord(k, 0)).unwrap();
                worst.observe((back - orig).abs(), &point);
            }
        }
        if worst.deviation <= CHART_ROUNDTRIP_TOL {
            Ok(())
        } else {
            Err(CheckError::ChartRoundTrip {
                name: self.name.clone(),
                worst: worst.deviation,
                witness: worst.witness.unwrap(),
            })
        }
    }

    /// Total time derivatives of the map components: `chain[j][r]` is the
    /// r-th derivative of component j, written over source-chart jets.
    fn derivative_chain(&self, max_order: u8) -> Result<Vec<Vec<Expression>>, CheckError> {
        self.forward
            .iter()
            .map(|component| {
                let mut levels = vec![normalize(component)];
                for _ in 0..max_order {
                    let next = total_time_derivative(levels.last().unwrap())?;
                    levels.push(normalize(&next));
                }
                Ok(levels)
            })
            .collect()
    }

    /// Composite chart applying `inner` first, then `self`.
    pub fn compose(&self, inner: &ChartMap) -> Result<ChartMap, CheckError> {
        if self.n() != inner.n() {
            return Err(CheckError::Dimension {
                detail: format!(
                    "cannot compose {}-coordinate chart with {}-coordinate chart",
                    self.n(),
                    inner.n()
                ),
            });
        }
        let fwd_map: BTreeMap<Symbol, Expression> = inner
            .forward
            .iter()
            .enumerate()
            .map(|(k, e)| (Symbol::coord(k, 0), e.clone()))
            .collect();
        let inv_map: BTreeMap<Symbol, Expression> = self
            .inverse
            .iter()
            .enumerate()
            .map(|(k, e)| (Symbol::coord(k, 0), e.clone()))
            .collect();
        let forward = self
            .forward
            .iter()
            .map(|e| normalize(&e.substitute(&fwd_map)))
            .collect();
        let inverse = inner
            .inverse
            .iter()
            .map(|e| normalize(&e.substitute(&inv_map)))
            .collect();
        ChartMap::new(
            &format!("{}*{}", self.name, inner.name),
            forward,
            inverse,
            inner.domain.clone(),
        )
    }
}

/// Pushes a source-chart jet binding through the chart's forward map,
/// producing the target-chart jets up to `max_order`. Time and multiplier
/// slots pass through unchanged.
pub fn transform_jet(
    chart: &ChartMap,
    binding: &Binding,
    max_order: u8,
) -> Result<Binding, CheckError> {
    let chain = chart.derivative_chain(max_order)?;
    let mut out = binding.clone();
    for (j, levels) in chain.iter().enumerate() {
        for (r, level) in levels.iter().enumerate() {
            out.set(Symbol::coord(j, r as u8), level.eval(binding)?);
        }
    }
    Ok(out)
}

/// For a pure Lagrangian the motion covector of `P = dL/dt` must equal the
/// Euler-Lagrange expression `∂L/∂q - d/dt ∂L/∂q̇` at every jet. Both sides
/// are derived independently and compared at seeded random jets.
pub fn check_identity(
    lagrangian: &Expression,
    samples: usize,
    seed: u64,
) -> Result<CheckReport, CheckError> {
    let n = dimension_of(lagrangian);
    check_identity_in(lagrangian, &JetBox::uniform(n, 0, -2.0, 2.0), samples, seed)
}

/// [`check_identity`] over a caller-chosen sampling domain, for Lagrangians
/// only defined on part of jet space (for example timelike velocities).
pub fn check_identity_in(
    lagrangian: &Expression,
    jet_box: &JetBox,
    samples: usize,
    seed: u64,
) -> Result<CheckReport, CheckError> {
    let n = jet_box.n();
    let dl = total_time_derivative(lagrangian)?;
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let mom = partial(&dl, &Symbol::coord(k, 2));
        let lhs = normalize(&Expression::sum(vec![
            partial(&dl, &Symbol::coord(k, 1)),
            Expression::product(vec![
                Expression::constant(2.0),
                total_time_derivative(&mom)?,
            ])
            .neg(),
        ]));
        let rhs = normalize(&Expression::sum(vec![
            partial(lagrangian, &Symbol::coord(k, 0)),
            total_time_derivative(&partial(lagrangian, &Symbol::coord(k, 1)))?.neg(),
        ]));
        pairs.push((lhs, rhs));
    }
    let flat: Vec<Expression> = pairs
        .iter()
        .flat_map(|(l, r)| [l.clone(), r.clone()])
        .collect();
    let mut rng = rng_for(seed, "identity");
    let bindings = jet_box.sample_finite(&mut rng, 2, &flat, samples);
    require_samples("identity", bindings.len(), samples)?;
    let mut worst = Worst::new();
    for b in &bindings {
        for (lhs, rhs) in &pairs {
            worst.observe(relative_deviation(lhs.eval(b)?, rhs.eval(b)?), b);
        }
    }
    Ok(CheckReport::new("identity", samples, IDENTITY_TOL, worst))
}

/// Re-expresses the model's power function in the chart's target coordinates
/// by substituting the inverse map's jets, re-derives the motion covector
/// there, and verifies both covariant laws at seeded jets:
/// `X = Jᵀ X̃` and `∂P/∂q̈ = Jᵀ ∂P̃/∂q̃̈` with `J = ∂q̃/∂q`.
pub fn check_covariance(
    cm: &CompiledModel,
    chart: &ChartMap,
    samples: usize,
    seed: u64,
) -> Result<CheckReport, CheckError> {
    if chart.n() != cm.n {
        return Err(CheckError::Dimension {
            detail: format!(
                "chart `{}` has {} coordinates, model has {}",
                chart.name,
                chart.n(),
                cm.n
            ),
        });
    }
    let n = cm.n;
    let name = format!("covariance-{}", chart.name);

    // Target-chart power function by substitution of the inverse jets.
    let mut inverse_jets = BTreeMap::new();
    for (k, inv) in chart.inverse.iter().enumerate() {
        let mut level = normalize(inv);
        for r in 0..=2u8 {
            inverse_jets.insert(Symbol::coord(k, r), level.clone());
            level = normalize(&total_time_derivative(&level)?);
        }
    }
    let power_t = normalize(&cm.power.substitute(&inverse_jets));
    let mut momentum_t = Vec::with_capacity(n);
    let mut x_t = Vec::with_capacity(n);
    for j in 0..n {
        let mom = normalize(&partial(&power_t, &Symbol::coord(j, 2)));
        let x = normalize(&Expression::sum(vec![
            partial(&power_t, &Symbol::coord(j, 1)),
            Expression::product(vec![
                Expression::constant(2.0),
                total_time_derivative(&mom)?,
            ])
            .neg(),
        ]));
        momentum_t.push(cm.apply_regularization(&mom));
        x_t.push(cm.apply_regularization(&x));
    }
    let jacobian: Vec<Vec<Expression>> = chart
        .forward
        .iter()
        .map(|fwd| {
            (0..n)
                .map(|k| normalize(&partial(fwd, &Symbol::coord(k, 0))))
                .collect()
        })
        .collect();

    let mut box_ = chart.domain.clone();
    box_.multipliers = vec![(-2.0, 2.0); cm.m];
    let mut rng = rng_for(seed, &name);
    let mut worst = Worst::new();
    let mut accepted = 0usize;
    'sampling: for _ in 0..samples * SAMPLE_BUDGET_FACTOR {
        if accepted == samples {
            break;
        }
        let b = box_.sample(&mut rng, 3);
        let Ok(image) = transform_jet(chart, &b, 3) else {
            continue;
        };
        let mut x_src = Vec::with_capacity(n);
        let mut mom_src = Vec::with_capacity(n);
        let mut x_img = Vec::with_capacity(n);
        let mut mom_img = Vec::with_capacity(n);
        let mut jac = vec![vec![0.0; n]; n];
        for k in 0..n {
            let (Ok(x), Ok(p)) = (cm.x_covector[k].eval(&b), cm.momentum[k].eval(&b)) else {
                continue 'sampling;
            };
            let (Ok(xt), Ok(pt)) = (x_t[k].eval(&image), momentum_t[k].eval(&image)) else {
                continue 'sampling;
            };
            x_src.push(x);
            mom_src.push(p);
            x_img.push(xt);
            mom_img.push(pt);
            for j in 0..n {
                match jacobian[j][k].eval(&b) {
                    Ok(v) => jac[j][k] = v,
                    Err(_) => continue 'sampling,
                }
            }
        }
        let all = x_src
            .iter()
            .chain(&mom_src)
            .chain(&x_img)
            .chain(&mom_img)
            .all(|v| v.is_finite());
        if !all {
            continue;
        }
        accepted += 1;
        for k in 0..n {
            let pulled_x: f64 = (0..n).map(|j| jac[j][k] * x_img[j]).sum();
            let pulled_p: f64 = (0..n).map(|j| jac[j][k] * mom_img[j]).sum();
            worst.observe(relative_deviation(x_src[k], pulled_x), &b);
            worst.observe(relative_deviation(mom_src[k], pulled_p), &b);
        }
    }
    require_samples(&name, accepted, samples)?;
    Ok(CheckReport::new(&name, samples, COVARIANCE_TOL, worst))
}

/// Degree-zero scaling of a radiative term: invariance of `pe` under
/// `(q̇, q̈) -> (s q̇, s² q̈)` at several scales, plus the differential
/// consequence `∂pe/∂q̇·q̇ = -2 ∂pe/∂q̈·q̈`, compared side against side so
/// the deviation scale tracks the terms that actually cancel.
pub fn check_homogeneity(
    pe: &Expression,
    samples: usize,
    seed: u64,
) -> Result<CheckReport, CheckError> {
    let n = dimension_of(pe);
    check_homogeneity_in(pe, &JetBox::uniform(n, 0, -2.0, 2.0), samples, seed)
}

/// [`check_homogeneity`] over a caller-chosen sampling domain.
pub fn check_homogeneity_in(
    pe: &Expression,
    jet_box: &JetBox,
    samples: usize,
    seed: u64,
) -> Result<CheckReport, CheckError> {
    let n = jet_box.n();
    let mut velocity_terms = Vec::with_capacity(n);
    let mut accel_terms = Vec::with_capacity(n);
    for k in 0..n {
        velocity_terms.push(Expression::product(vec![
            Expression::coord(k, 1),
            partial(pe, &Symbol::coord(k, 1)),
        ]));
        accel_terms.push(Expression::product(vec![
            Expression::constant(-2.0),
            Expression::coord(k, 2),
            partial(pe, &Symbol::coord(k, 2)),
        ]));
    }
    let euler_lhs = normalize(&Expression::sum(velocity_terms));
    let euler_rhs = normalize(&Expression::sum(accel_terms));
    let mut rng = rng_for(seed, "homogeneity");
    let mut worst = Worst::new();
    let mut accepted = 0usize;
    'sampling: for _ in 0..samples * SAMPLE_BUDGET_FACTOR {
        if accepted == samples {
            break;
        }
        let b = jet_box.sample(&mut rng, 2);
        let Ok(base) = pe.eval(&b) else { continue };
        if !base.is_finite() {
            continue;
        }
        let mut scaled_vals = Vec::with_capacity(HOMOGENEITY_SCALES.len());
        for s in HOMOGENEITY_SCALES {
            let mut sb = b.clone();
            for k in 0..n {
                let qd = b.get(&Symbol::coord(k, 1)).unwrap();
                let qdd = b.get(&Symbol::coord(k, 2)).unwrap();
                sb.set(Symbol::coord(k, 1), s * qd);
                sb.set(Symbol::coord(k, 2), s * s * qdd);
            }
            match pe.eval(&sb) {
                Ok(v) if v.is_finite() => scaled_vals.push(v),
                _ => continue 'sampling,
            }
        }
        let (Ok(el), Ok(er)) = (euler_lhs.eval(&b), euler_rhs.eval(&b)) else {
            continue;
        };
        if !el.is_finite() || !er.is_finite() {
            continue;
        }
        accepted += 1;
        for v in scaled_vals {
            worst.observe(relative_deviation(v, base), &b);
        }
        worst.observe(relative_deviation(el, er), &b);
    }
    require_samples("homogeneity", accepted, samples)?;
    Ok(CheckReport::new(
        "homogeneity",
        samples,
        HOMOGENEITY_TOL,
        worst,
    ))
}

/// First variation of the doubly integrated power over a window `[a, b]`
/// centred on the state's time, against the predicted leading form
/// `ε v·(X(t̄) + (b - t̄) Y(t̄))`. Returns `(δI/ε, v·X, v·(b-t̄)Y)`.
///
/// The reference curve is the Taylor polynomial matching the state's jets;
/// the perturbation is a C² bump `η(x) = 35/(32ε_m) (1 - (x/ε_m)²)³` of unit
/// integral, so the double integral reduces exactly to
/// `∫ (b - u) δP(u) du`, evaluated with composite Simpson quadrature.
pub fn variational_delta(
    cm: &CompiledModel,
    state: &JetState,
    direction: &[f64],
    width: f64,
    bump_halfwidth: f64,
) -> Result<(f64, f64, f64), CheckError> {
    let Some(y_covector) = &cm.y_covector else {
        return Err(CheckError::VariationalConstrained);
    };
    if direction.len() != cm.n {
        return Err(CheckError::Dimension {
            detail: format!(
                "direction has {} components, model has {}",
                direction.len(),
                cm.n
            ),
        });
    }
    if !(width > 0.0) || !(bump_halfwidth > 0.0) {
        return Err(CheckError::BadWindow {
            detail: "window width and bump half-width must be positive".to_string(),
        });
    }
    if bump_halfwidth > width / 2.0 {
        return Err(CheckError::BadWindow {
            detail: format!(
                "bump half-width {bump_halfwidth} does not fit in half-window {}",
                width / 2.0
            ),
        });
    }
    if state.q.len() != cm.n || state.qd.len() != cm.n {
        return Err(CheckError::Dimension {
            detail: "state jets do not match model dimension".to_string(),
        });
    }

    let n = cm.n;
    let t_mid = state.t;
    let a = t_mid - width / 2.0;
    let b = t_mid + width / 2.0;
    // Taylor coefficients of the reference curve about t̄.
    let coeff: Vec<[f64; 4]> = (0..n)
        .map(|k| {
            [
                state.q[k],
                state.qd[k],
                state.qdd.get(k).copied().unwrap_or(0.0) / 2.0,
                state.qddd.get(k).copied().unwrap_or(0.0) / 6.0,
            ]
        })
        .collect();
    let curve = |k: usize, x: f64| {
        let c = &coeff[k];
        [
            ((c[3] * x + c[2]) * x + c[1]) * x + c[0],
            (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1],
            6.0 * c[3] * x + 2.0 * c[2],
        ]
    };
    let bump = Bump::new(bump_halfwidth);

    let h = (b - a) / (VARIATIONAL_NODES - 1) as f64;
    let mut delta = 0.0;
    for i in 0..VARIATIONAL_NODES {
        let u = a + h * i as f64;
        let x = u - t_mid;
        let mut base = Binding::new();
        base.set(Symbol::Time, u);
        let mut pert = Binding::new();
        pert.set(Symbol::Time, u);
        for k in 0..n {
            let jets = curve(k, x);
            let shift = [bump.eta(x), bump.eta_d(x), bump.eta_dd(x)];
            for r in 0..3u8 {
                base.set(Symbol::coord(k, r), jets[r as usize]);
                pert.set(
                    Symbol::coord(k, r),
                    jets[r as usize] + VARIATIONAL_AMPLITUDE * direction[k] * shift[r as usize],
                );
            }
        }
        let weight = if i == 0 || i == VARIATIONAL_NODES - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        delta += weight * (b - u) * (cm.power.eval(&pert)? - cm.power.eval(&base)?);
    }
    delta *= h / 3.0;

    let mut mid = Binding::new();
    mid.set(Symbol::Time, t_mid);
    for k in 0..n {
        mid.set(Symbol::coord(k, 0), state.q[k]);
        mid.set(Symbol::coord(k, 1), state.qd[k]);
        mid.set(Symbol::coord(k, 2), state.qdd.get(k).copied().unwrap_or(0.0));
        mid.set(
            Symbol::coord(k, 3),
            state.qddd.get(k).copied().unwrap_or(0.0),
        );
        mid.set(Symbol::coord(k, 4), 0.0);
    }
    let mut x_term = 0.0;
    let mut y_term = 0.0;
    for k in 0..n {
        x_term += direction[k] * cm.x_covector[k].eval(&mid)?;
        y_term += direction[k] * (b - t_mid) * y_covector[k].eval(&mid)?;
    }
    Ok((delta / VARIATIONAL_AMPLITUDE, x_term, y_term))
}

/// Compares the measured first variation against its predicted leading form.
/// The witness is the window's central jet.
pub fn check_variational(
    cm: &CompiledModel,
    state: &JetState,
    direction: &[f64],
    width: f64,
    bump_halfwidth: f64,
) -> Result<CheckReport, CheckError> {
    let (measured, x_term, y_term) =
        variational_delta(cm, state, direction, width, bump_halfwidth)?;
    let mut worst = Worst::new();
    worst.observe(relative_deviation(measured, x_term + y_term), &state.binding());
    Ok(CheckReport::new("variational", 1, VARIATIONAL_TOL, worst))
}

/// C² compactly supported bump of unit integral on `[-eps, eps]`.
struct Bump {
    eps: f64,
    scale: f64,
}

impl Bump {
    fn new(eps: f64) -> Self {
        Bump {
            eps,
            scale: 35.0 / (32.0 * eps),
        }
    }

    fn eta(&self, x: f64) -> f64 {
        let u = x / self.eps;
        if u.abs() >= 1.0 {
            0.0
        } else {
            self.scale * (1.0 - u * u).powi(3)
        }
    }

    fn eta_d(&self, x: f64) -> f64 {
        let u = x / self.eps;
        if u.abs() >= 1.0 {
            0.0
        } else {
            -6.0 * self.scale / self.eps * u * (1.0 - u * u).powi(2)
        }
    }

    fn eta_dd(&self, x: f64) -> f64 {
        let u = x / self.eps;
        if u.abs() >= 1.0 {
            0.0
        } else {
            -6.0 * self.scale / (self.eps * self.eps) * (1.0 - u * u) * (1.0 - 5.0 * u * u)
        }
    }
}

/// Infers the coordinate count an expression is written over.
fn dimension_of(e: &Expression) -> usize {
    e.free_symbols()
        .iter()
        .filter_map(|s| match s {
            Symbol::Coord { index, .. } => Some(index + 1),
            _ => None,
        })
        .max()
        .unwrap_or(1)
}

fn require_samples(check: &str, got: usize, want: usize) -> Result<(), CheckError> {
    if got < want {
        Err(CheckError::ThinSample {
            check: check.to_string(),
            got,
            want,
        })
    } else {
        Ok(())
    }
}

/// The stock chart family used by the certification suite: a translation, an
/// anisotropic scaling, a sinh warp, a cubic map with explicit time
/// dependence (restricted to t > 0 where it is globally invertible), and for
/// two or more coordinates a rotation of the first pair.
pub fn standard_charts(n: usize) -> Vec<ChartMap> {
    assert!(n >= 1, "charts need at least one coordinate");
    let ctx = ParseContext::unconstrained(n);
    let q = |i: usize| format!("q{i}");
    let build = |name: &str, fwd: Vec<String>, inv: Vec<String>, domain: JetBox| {
        let parse_all = |texts: &[String]| -> Vec<Expression> {
            texts
                .iter()
                .map(|s| parse(s, &ctx).expect("standard chart component parses"))
                .collect()
        };
        ChartMap::new(name, parse_all(&fwd), parse_all(&inv), domain)
            .expect("standard chart round-trips")
    };
    let default_box = || JetBox::uniform(n, 0, -2.0, 2.0);

    let mut charts = Vec::new();
    let shifts: Vec<f64> = (0..n).map(|i| 0.5 + 0.25 * i as f64).collect();
    charts.push(build(
        "translation",
        (0..n).map(|i| format!("{} + {}", q(i), shifts[i])).collect(),
        (0..n).map(|i| format!("{} - {}", q(i), shifts[i])).collect(),
        default_box(),
    ));
    let factors: Vec<f64> = (0..n).map(|i| 1.5 + 0.5 * i as f64).collect();
    charts.push(build(
        "scaling",
        (0..n).map(|i| format!("{}*{}", factors[i], q(i))).collect(),
        (0..n).map(|i| format!("{}/{}", q(i), factors[i])).collect(),
        default_box(),
    ));
    charts.push(build(
        "sinh",
        (0..n)
            .map(|i| format!("(exp({}) - exp(-{}))/2", q(i), q(i)))
            .collect(),
        (0..n)
            .map(|i| format!("log({} + sqrt({}^2 + 1))", q(i), q(i)))
            .collect(),
        default_box(),
    ));
    charts.push(cubic_time_chart(n));
    if n >= 2 {
        let (s, c) = (0.3_f64.sin(), 0.3_f64.cos());
        let mut fwd = vec![
            format!("{c}*q0 - {s}*q1"),
            format!("{s}*q0 + {c}*q1"),
        ];
        let mut inv = vec![
            format!("{c}*q0 + {s}*q1"),
            format!("-{s}*q0 + {c}*q1"),
        ];
        for i in 2..n {
            fwd.push(q(i));
            inv.push(q(i));
        }
        charts.push(build("rotation", fwd, inv, default_box()));
    }
    charts
}

/// Standard charts re-domained to a caller's sampling box, keeping each
/// chart's own time window (the cubic chart is only invertible for t > 0).
/// The coordinate ranges of the box must stay inside the default chart
/// domain, which holds for every scenario box in this crate.
pub fn charts_for_box(jet_box: &JetBox) -> Vec<ChartMap> {
    standard_charts(jet_box.n())
        .into_iter()
        .map(|mut chart| {
            let time = chart.domain.time;
            chart.domain = jet_box.clone();
            chart.domain.time = time;
            chart
        })
        .collect()
}

/// `q̃0 = q0³ + t q0`, identity elsewhere. Strictly monotone in `q0` for
/// t > 0, inverted in closed form; the two cube-root operands are kept
/// individually nonnegative so fractional powers stay in domain.
fn cubic_time_chart(n: usize) -> ChartMap {
    let ctx = ParseContext::unconstrained(n);
    let mut forward = vec![parse("q0^3 + t*q0", &ctx).expect("cubic forward parses")];
    let disc = parse("sqrt(q0^2/4 + t^3/27)", &ctx).expect("cubic discriminant parses");
    let half = parse("q0/2", &ctx).expect("cubic half parses");
    let plus = Expression::sum(vec![disc.clone(), half.clone()]);
    let minus = Expression::sum(vec![disc, half.neg()]);
    let mut inverse = vec![Expression::sum(vec![
        plus.pow(1.0 / 3.0),
        minus.pow(1.0 / 3.0).neg(),
    ])];
    for i in 1..n {
        forward.push(Expression::coord(i, 0));
        inverse.push(Expression::coord(i, 0));
    }
    let domain = JetBox::uniform(n, 0, -2.0, 2.0).with_time(0.5, 2.0);
    ChartMap::new("cubic_time", forward, inverse, domain).expect("cubic chart round-trips")
}
