//! Built-in model instances with recommended initial data and integrator
//! settings, spanning every order class the compiler produces: a damped
//! oscillator, a non-holonomic knife edge, a friction-damped particle on a
//! parabola with radiation reaction, and nonrelativistic plus relativistic
//! radiating charges. Each carries the jet-sampling domain its certification
//! checks should draw from, which for the relativistic systems keeps sampled
//! four-velocities timelike.

use crate::eom::JetState;
use crate::expr::{parse, Expression, ParseContext};
use crate::integrate::{IntegratorConfig, Record};
use crate::model::ModelSpec;
use crate::sample::JetBox;
use thiserror::Error;

/// How closely initial four-velocity data must satisfy its scenario's
/// normalization requirements.
pub const INITIAL_NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("initial data must provide q, q̇ and q̈ with {expected} components each")]
    Dimension { expected: usize },
    #[error("initial four-velocity is not timelike: u·u = {norm:.6e}")]
    NonTimelike { norm: f64 },
    #[error("initial four-velocity is not proper-time normalized: u·u = {norm:.12e}")]
    Unnormalized { norm: f64 },
    #[error("initial acceleration is not orthogonal to the four-velocity: a·u = {dot:.6e}")]
    NotOrthogonal { dot: f64 },
}

/// A ready-to-run model: specification, recommended initial jets and
/// integrator settings, a one-line account of the expected behavior, and
/// the jet-space box its checks should sample from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub spec: ModelSpec,
    pub initial: JetState,
    pub config: IntegratorConfig,
    pub expected: String,
    pub jet_box: JetBox,
}

/// The canonical instances, one per constructor, under their registry names.
pub fn all() -> Vec<Scenario> {
    vec![
        damped_oscillator(1.0, 1.0, 0.1),
        knife_edge(1.0, 1.0, 0.5, 1.0),
        parabola_particle(1.0, 1.0, 1.0, 0.1),
        canonical_lad_nonrelativistic(),
        canonical_lad_relativistic_free_param(),
        canonical_lad_relativistic_proper(),
    ]
}

pub fn names() -> Vec<String> {
    all().into_iter().map(|s| s.name).collect()
}

pub fn by_name(name: &str) -> Option<Scenario> {
    all().into_iter().find(|s| s.name == name)
}

/// `L = ½m q̇² - ½k q²` with Rayleigh dissipation `½γ q̇²`.
pub fn damped_oscillator(m: f64, k: f64, gamma: f64) -> Scenario {
    let ctx = ParseContext::unconstrained(1).with_params(["m", "k", "gamma"]);
    let mut spec = ModelSpec::new(1);
    spec.coords = vec!["x".to_string()];
    spec.lagrangian = parse("0.5*m*qd0^2 - 0.5*k*q0^2", &ctx).unwrap();
    spec.rayleigh = parse("0.5*gamma*qd0^2", &ctx).unwrap();
    spec.params.insert("m".into(), m);
    spec.params.insert("k".into(), k);
    spec.params.insert("gamma".into(), gamma);
    Scenario {
        name: "damped_oscillator".to_string(),
        spec,
        initial: JetState::second_order(0.0, vec![1.0], vec![0.0]),
        config: IntegratorConfig {
            t1: 10.0,
            ..IntegratorConfig::default()
        },
        expected: "exponentially damped oscillation; energy dissipates at rate -γ q̇²"
            .to_string(),
        jet_box: JetBox::uniform(1, 0, -2.0, 2.0),
    }
}

/// Free particle on the plane carrying a knife edge: the contact constraint
/// `ẋ sin θ - ẏ cos θ = 0` keeps the velocity along the blade.
pub fn knife_edge(mass: f64, inertia: f64, omega: f64, speed: f64) -> Scenario {
    let ctx = ParseContext::unconstrained(3)
        .with_params(["m", "inertia"])
        .with_multipliers(1);
    let mut spec = ModelSpec::new(3);
    spec.coords = vec!["x".to_string(), "y".to_string(), "theta".to_string()];
    spec.lagrangian = parse("0.5*m*(qd0^2 + qd1^2) + 0.5*inertia*qd2^2", &ctx).unwrap();
    spec.constraints = vec![parse("qd0*sin(q2) - qd1*cos(q2)", &ctx).unwrap()];
    spec.params.insert("m".into(), mass);
    spec.params.insert("inertia".into(), inertia);
    Scenario {
        name: "knife_edge".to_string(),
        spec,
        // Blade along +x, turning at constant rate: traces a circle of
        // radius speed/omega around (0, speed/omega).
        initial: JetState::second_order(0.0, vec![0.0; 3], vec![speed, 0.0, omega]),
        config: IntegratorConfig {
            t1: 20.0,
            beta: 5.0,
            ..IntegratorConfig::default()
        },
        expected: format!(
            "circular path of radius {} about (0, {}); constraint residual held near zero",
            speed / omega,
            speed / omega
        ),
        jet_box: JetBox::uniform(3, 1, -2.0, 2.0),
    }
}

/// Charged bead with Coulomb-type friction on the horizontal parabola
/// `y = b x²/2`, reduced to the single coordinate x, radiating per its
/// curved acceleration.
pub fn parabola_particle(m: f64, charge: f64, b: f64, mu_friction: f64) -> Scenario {
    let ctx = ParseContext::unconstrained(1).with_params(["m", "b", "mu", "charge"]);
    let mut spec = ModelSpec::new(1);
    spec.coords = vec!["x".to_string()];
    spec.lagrangian = parse("0.5*m*(1 + b^2*q0^2)*qd0^2", &ctx).unwrap();
    spec.rayleigh = parse("mu*b*abs(qd0)^3", &ctx).unwrap();
    spec.radiative = parse(
        "-(charge^2/6)*(qdd0^2*(1 + b^2*q0^2) + b^2*qd0^4 + 2*b^2*q0*qd0^2*qdd0)",
        &ctx,
    )
    .unwrap();
    spec.params.insert("m".into(), m);
    spec.params.insert("b".into(), b);
    spec.params.insert("mu".into(), mu_friction);
    spec.params.insert("charge".into(), charge);
    // Start on the frictional branch: the second-order (charge-free) value
    // of ẍ at x = 0, ẋ = 1, so the radiative correction stays small.
    let qdd0 = -3.0 * mu_friction * b / m;
    Scenario {
        name: "parabola_particle".to_string(),
        spec,
        initial: JetState::third_order(0.0, vec![0.0], vec![1.0], vec![qdd0]),
        config: IntegratorConfig {
            t1: 2.0,
            ..IntegratorConfig::default()
        },
        expected: "friction-dominated slowing with a small radiation correction; \
                   kept to short windows because the runaway branch grows as exp(3m t/2q²)"
            .to_string(),
        jet_box: JetBox::uniform(1, 0, -2.0, 2.0),
    }
}

/// Nonrelativistic radiating charge in Cartesian coordinates, coupled to
/// scalar and vector potentials given over (t, q0..q2).
pub fn lad_nonrelativistic(
    m: f64,
    charge: f64,
    phi: &Expression,
    a_potential: &[Expression; 3],
) -> Scenario {
    let ctx = ParseContext::unconstrained(3).with_params(["m", "charge"]);
    let charge_sym = Expression::parameter("charge");
    let mut terms = vec![parse("0.5*m*(qd0^2 + qd1^2 + qd2^2)", &ctx).unwrap()];
    if !phi.is_zero() {
        terms.push(Expression::product(vec![charge_sym.clone(), phi.clone()]).neg());
    }
    for (i, a) in a_potential.iter().enumerate() {
        if !a.is_zero() {
            terms.push(Expression::product(vec![
                charge_sym.clone(),
                a.clone(),
                Expression::coord(i, 1),
            ]));
        }
    }
    let mut spec = ModelSpec::new(3);
    spec.coords = vec!["x".to_string(), "y".to_string(), "z".to_string()];
    spec.lagrangian = Expression::sum(terms);
    spec.radiative = parse("-(charge^2/6)*(qdd0^2 + qdd1^2 + qdd2^2)", &ctx).unwrap();
    spec.params.insert("m".into(), m);
    spec.params.insert("charge".into(), charge);
    Scenario {
        name: "lad_nonrelativistic".to_string(),
        spec,
        initial: JetState::third_order(0.0, vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]),
        config: IntegratorConfig {
            t1: 5.0,
            ..IntegratorConfig::default()
        },
        expected: "radiating charge in the given potentials; zero-field case is the \
                   free runaway system"
            .to_string(),
        jet_box: JetBox::uniform(3, 0, -2.0, 2.0),
    }
}

/// Canonical uniform electric field E0 = 1 along x: Φ = -x, A = 0. Initial
/// acceleration sits exactly on the non-runaway branch charge·E0/m.
fn canonical_lad_nonrelativistic() -> Scenario {
    let ctx = ParseContext::unconstrained(3);
    let zero = Expression::zero();
    let mut scenario = lad_nonrelativistic(
        1.0,
        1.0,
        &parse("-q0", &ctx).unwrap(),
        &[zero.clone(), zero.clone(), zero],
    );
    scenario.initial =
        JetState::third_order(0.0, vec![0.0; 3], vec![0.0; 3], vec![1.0, 0.0, 0.0]);
    scenario.expected = "constant acceleration charge*E0/m along x with zero jerk \
                         (non-runaway branch of the uniform-field equation)"
        .to_string();
    scenario
}

/// Minkowski dot product with signature (-,+,+,+).
pub fn minkowski_dot(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Sampling box whose velocity slots stay strictly inside the timelike cone:
/// u0 in [2,3] against spatial rates in [-1,1].
fn timelike_box() -> JetBox {
    let mut jb = JetBox::uniform(4, 0, -2.0, 2.0).with_slot(0, 1, 2.0, 3.0);
    for i in 1..4 {
        jb = jb.with_slot(i, 1, -1.0, 1.0);
    }
    jb
}

/// `-x'·x'` spelled out with the (-,+,+,+) metric; positive on timelike data.
const MINUS_UU: &str = "(qd0^2 - qd1^2 - qd2^2 - qd3^2)";

/// Radiative term of the parametrization-free relativistic charge: the
/// covariant acceleration a_μ = γ²x''_μ + γ⁴(x'·x'')x'_μ contracted with
/// itself, γ² = 1/(-x'·x'). Degree zero under jet scaling, which is the
/// reparametrization invariance of the world line.
fn free_param_radiative() -> String {
    let g2 = format!("(1/{MINUS_UU})");
    let udd = "(-(qd0*qdd0) + qd1*qdd1 + qd2*qdd2 + qd3*qdd3)";
    // Lower components: index 0 flips sign.
    let lower = |sym: &str, mu: usize| {
        if mu == 0 {
            format!("(-{sym}0)")
        } else {
            format!("{sym}{mu}")
        }
    };
    let a: Vec<String> = (0..4)
        .map(|mu| {
            format!(
                "({g2}*{} + {g2}^2*{udd}*{})",
                lower("qdd", mu),
                lower("qd", mu)
            )
        })
        .collect();
    format!(
        "-(charge^2/6)*(-({0}^2) + {1}^2 + {2}^2 + {3}^2)",
        a[0], a[1], a[2], a[3]
    )
}

fn coupling_terms(charge_sym: &Expression, a_mu: &[Expression; 4]) -> Vec<Expression> {
    a_mu.iter()
        .enumerate()
        .filter(|(_, a)| !a.is_zero())
        .map(|(mu, a)| {
            Expression::product(vec![
                charge_sym.clone(),
                a.clone(),
                Expression::coord(mu, 1),
            ])
        })
        .collect()
}

fn check_four_jets(initial: &JetState) -> Result<(), ScenarioError> {
    if initial.q.len() != 4 || initial.qd.len() != 4 || initial.qdd.len() != 4 {
        return Err(ScenarioError::Dimension { expected: 4 });
    }
    Ok(())
}

/// Relativistic radiating charge over an arbitrary world-line parameter:
/// `L = -m sqrt(-x'·x') + charge A·x'` with the reparametrization-invariant
/// radiative term. The mass matrix is singular along x', so integration
/// runs through the minimum-norm jerk branch.
pub fn lad_relativistic_free_param(
    m: f64,
    charge: f64,
    a_mu: &[Expression; 4],
    initial: JetState,
) -> Result<Scenario, ScenarioError> {
    check_four_jets(&initial)?;
    let norm = minkowski_dot(&initial.qd, &initial.qd);
    if norm >= 0.0 {
        return Err(ScenarioError::NonTimelike { norm });
    }
    let ctx = ParseContext::unconstrained(4).with_params(["m", "charge"]);
    let mut terms = vec![parse(&format!("-m*sqrt({MINUS_UU})"), &ctx).unwrap()];
    terms.extend(coupling_terms(&Expression::parameter("charge"), a_mu));
    let mut spec = ModelSpec::new(4);
    spec.coords = (0..4).map(|mu| format!("x{mu}")).collect();
    spec.lagrangian = Expression::sum(terms);
    spec.radiative = parse(&free_param_radiative(), &ctx).unwrap();
    // Proper-time gauge: u.a = 0. The singular mass matrix leaves one jerk
    // component free, and the radiative force only matches the physical
    // radiation-reaction equation while the parametrization keeps
    // d(u.u)/dtau = 0; holding u.a pins that branch.
    spec.gauge = Some(
        parse(
            "-(qd0*qdd0) + qd1*qdd1 + qd2*qdd2 + qd3*qdd3",
            &ctx,
        )
        .unwrap(),
    );
    spec.homogeneous = true;
    spec.params.insert("m".into(), m);
    spec.params.insert("charge".into(), charge);
    Ok(Scenario {
        name: "lad_relativistic_free_param".to_string(),
        spec,
        initial,
        config: IntegratorConfig {
            t1: 5.0,
            beta: 1.0,
            ..IntegratorConfig::default()
        },
        expected: "world line of a radiating relativistic charge, the free jerk component \
                   of the singular mass matrix spent holding the proper-time gauge"
            .to_string(),
        jet_box: timelike_box(),
    })
}

/// The same physics fixed to proper-time parametrization:
/// `L = m/2 u·u + charge A·u`, radiative term `-(q²/6) a·a/(u·u)²`.
pub fn lad_relativistic_proper(
    m: f64,
    charge: f64,
    a_mu: &[Expression; 4],
    initial: JetState,
) -> Result<Scenario, ScenarioError> {
    check_four_jets(&initial)?;
    let norm = minkowski_dot(&initial.qd, &initial.qd);
    if (norm + 1.0).abs() > INITIAL_NORMALIZATION_TOL {
        return Err(ScenarioError::Unnormalized { norm });
    }
    let dot = minkowski_dot(&initial.qd, &initial.qdd);
    if dot.abs() > INITIAL_NORMALIZATION_TOL {
        return Err(ScenarioError::NotOrthogonal { dot });
    }
    let ctx = ParseContext::unconstrained(4).with_params(["m", "charge"]);
    let uu = format!("(-{MINUS_UU})");
    let mut terms = vec![parse(&format!("0.5*m*{uu}"), &ctx).unwrap()];
    terms.extend(coupling_terms(&Expression::parameter("charge"), a_mu));
    let mut spec = ModelSpec::new(4);
    spec.coords = (0..4).map(|mu| format!("x{mu}")).collect();
    spec.lagrangian = Expression::sum(terms);
    spec.radiative = parse(
        &format!("-(charge^2/6)*((-(qdd0^2) + qdd1^2 + qdd2^2 + qdd3^2)/{MINUS_UU}^2)"),
        &ctx,
    )
    .unwrap();
    spec.homogeneous = true;
    spec.params.insert("m".into(), m);
    spec.params.insert("charge".into(), charge);
    Ok(Scenario {
        name: "lad_relativistic_proper".to_string(),
        spec,
        initial,
        config: IntegratorConfig {
            t1: 10.0,
            ..IntegratorConfig::default()
        },
        expected: "proper-time world line satisfying the relativistic radiation-reaction \
                   equation; u·u = -1 preserved by the dynamics"
            .to_string(),
        jet_box: timelike_box(),
    })
}

/// Shared canonical field for the relativistic pair: uniform electric field
/// E0 = 0.1 along x1 from the potential A_1 = -E0 x0, with charge² = 2 so
/// the runaway rate 3m/2q² is 3/4.
fn canonical_relativistic_parts() -> (f64, f64, [Expression; 4], JetState) {
    let ctx = ParseContext::unconstrained(4);
    let m = 1.0;
    let charge = std::f64::consts::SQRT_2;
    let e0 = 0.1;
    let zero = Expression::zero();
    let a_mu = [
        zero.clone(),
        parse("-0.1*q0", &ctx).unwrap(),
        zero.clone(),
        zero,
    ];
    // Rest in the field: u = (1,0,0,0) and the Lorentz acceleration
    // a = (0, charge E0/m, 0, 0), orthogonal to u.
    let initial = JetState::third_order(
        0.0,
        vec![0.0; 4],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, charge * e0 / m, 0.0, 0.0],
    );
    (m, charge, a_mu, initial)
}

fn canonical_lad_relativistic_free_param() -> Scenario {
    let (m, charge, a_mu, initial) = canonical_relativistic_parts();
    lad_relativistic_free_param(m, charge, &a_mu, initial)
        .expect("canonical initial data is timelike")
}

fn canonical_lad_relativistic_proper() -> Scenario {
    let (m, charge, a_mu, initial) = canonical_relativistic_parts();
    lad_relativistic_proper(m, charge, &a_mu, initial)
        .expect("canonical initial data is normalized")
}

/// Spatial positions as functions of coordinate time x0, linearly
/// interpolated between records, for comparing world lines across
/// parametrizations. Returns one `[x1, x2, x3]` row per requested x0, or
/// None when an x0 falls outside the trajectory or x0 is not increasing.
pub fn worldline_positions(records: &[Record], x0_values: &[f64]) -> Option<Vec<Vec<f64>>> {
    if records.len() < 2 || records.windows(2).any(|w| w[1].q[0] <= w[0].q[0]) {
        return None;
    }
    let spatial = records[0].q.len() - 1;
    let mut out = Vec::with_capacity(x0_values.len());
    for &x0 in x0_values {
        let idx = records.partition_point(|r| r.q[0] < x0);
        if idx == 0 || idx == records.len() {
            return None;
        }
        let (lo, hi) = (&records[idx - 1], &records[idx]);
        let w = (x0 - lo.q[0]) / (hi.q[0] - lo.q[0]);
        out.push(
            (1..=spatial)
                .map(|i| lo.q[i] + w * (hi.q[i] - lo.q[i]))
                .collect(),
        );
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::{check_homogeneity_in, check_identity_in};
    use crate::eom::{self, JetState};
    use crate::expr::{Binding, Symbol};
    use crate::integrate::{simulate, Method, Status};
    use crate::linalg::smallest_singular_value;
    use crate::model::{compile, OrderClass};

    fn jet4(qd: [f64; 4], qdd: [f64; 4], qddd: [f64; 4]) -> Binding {
        let mut b = Binding::new();
        b.set(Symbol::Time, 0.0);
        for k in 0..4 {
            b.set(Symbol::coord(k, 0), 0.1 * k as f64);
            b.set(Symbol::coord(k, 1), qd[k]);
            b.set(Symbol::coord(k, 2), qdd[k]);
            b.set(Symbol::coord(k, 3), qddd[k]);
        }
        b
    }

    #[test]
    fn canonical_scenarios_compile_with_declared_classes() {
        for scenario in all() {
            let cm = compile(&scenario.spec).unwrap();
            let expected = match scenario.name.as_str() {
                "damped_oscillator" => OrderClass::SecondOrder,
                "knife_edge" => OrderClass::SecondOrderConstrained,
                _ => OrderClass::ThirdOrder,
            };
            assert_eq!(cm.class, expected, "{}", scenario.name);
            // Recommended initial data is admissible: constraints hold.
            let binding = scenario.initial.binding();
            for f in &cm.constraints {
                assert!(f.eval(&binding).unwrap().abs() <= 1e-9, "{}", scenario.name);
            }
        }
    }

    #[test]
    fn every_scenario_lagrangian_passes_the_reduction_identity() {
        for scenario in all() {
            let cm = compile(&scenario.spec).unwrap();
            let report =
                check_identity_in(&cm.lagrangian, &scenario.jet_box, 40, 0).unwrap();
            assert!(report.pass, "{}: {report}", scenario.name);
        }
    }

    #[test]
    fn relativistic_radiative_terms_are_degree_zero() {
        for scenario in all() {
            if !scenario.spec.homogeneous {
                continue;
            }
            let cm = compile(&scenario.spec).unwrap();
            let pe = cm.free_part.clone();
            // The free part of these models is exactly the radiative term.
            let report = check_homogeneity_in(&pe, &scenario.jet_box, 40, 0).unwrap();
            assert!(report.pass, "{}: {report}", scenario.name);
        }
        // The parabola's radiative term scales with degree four instead.
        let parabola = parabola_particle(1.0, 1.0, 1.0, 0.1);
        let cm = compile(&parabola.spec).unwrap();
        let report = check_homogeneity_in(&cm.free_part, &parabola.jet_box, 40, 0);
        // The parabola also has friction in its free part, so strip it by
        // rebuilding with mu = 0 to isolate the radiative scaling.
        drop(report);
        let no_friction = parabola_particle(1.0, 1.0, 1.0, 0.0);
        let cm = compile(&no_friction.spec).unwrap();
        let report = check_homogeneity_in(&cm.free_part, &no_friction.jet_box, 40, 0).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn overdamped_oscillator_never_crosses_zero() {
        let scenario = damped_oscillator(1.0, 1.0, 10.0);
        let cm = compile(&scenario.spec).unwrap();
        let traj = simulate(&cm, &scenario.initial, &scenario.config).unwrap();
        assert_eq!(traj.status, Status::Completed);
        assert!(traj.records.iter().all(|r| r.q[0] > 0.0));
    }

    #[test]
    fn knife_edge_traces_the_predicted_circle() {
        let scenario = knife_edge(1.0, 1.0, 0.5, 1.0);
        let cm = compile(&scenario.spec).unwrap();
        let config = IntegratorConfig {
            t1: 4.0 * std::f64::consts::PI,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..scenario.config.clone()
        };
        let traj = simulate(&cm, &scenario.initial, &config).unwrap();
        assert_eq!(traj.status, Status::Completed);
        let radius = 2.0;
        for r in &traj.records {
            let d = (r.q[0].powi(2) + (r.q[1] - radius).powi(2)).sqrt();
            assert!((d - radius).abs() <= 1e-6, "t={} d={}", r.t, d);
            // Steady turn: the blade force balances the centripetal
            // acceleration, mu = -m v omega.
            assert!((r.mu[0] + 0.5).abs() <= 1e-6, "t={} mu={}", r.t, r.mu[0]);
        }
    }

    #[test]
    fn parabola_reduces_to_free_radiating_charge_at_flat_geometry() {
        let scenario = parabola_particle(1.0, 1.0, 0.0, 0.1);
        let cm = compile(&scenario.spec).unwrap();
        assert_eq!(cm.class, OrderClass::ThirdOrder);
        // b = 0 removes friction and curvature: X = -m q̈ + (2q²/3) q⃛.
        let mut b = Binding::new();
        b.set(Symbol::Time, 0.0);
        b.set(Symbol::coord(0, 0), 0.7);
        b.set(Symbol::coord(0, 1), -1.2);
        b.set(Symbol::coord(0, 2), 1.5);
        b.set(Symbol::coord(0, 3), 0.6);
        let x = cm.x_covector[0].eval(&b).unwrap();
        assert!((x - (-1.5 + 2.0 / 3.0 * 0.6)).abs() < 1e-12);
    }

    #[test]
    fn parabola_canonical_jerk_value() {
        let scenario = parabola_particle(1.0, 1.0, 1.0, 0.1);
        let cm = compile(&scenario.spec).unwrap();
        // At (x, ẋ, ẍ) = (1, 1, 0): remainder -m b²xẋ² - 3μbẋ² = -1.3 and
        // mass -(2q²/3)(1+b²x²) = -4/3, so the jerk is 0.975.
        let out = eom::jerk_solve(&cm, 0.0, &[1.0], &[1.0], &[0.0]).unwrap();
        assert!(!out.least_squares);
        assert!((out.qddd[0] - 0.975).abs() < 1e-12);
    }

    #[test]
    fn uniform_field_covector_matches_componentwise_form() {
        let scenario = canonical_lad_nonrelativistic();
        let cm = compile(&scenario.spec).unwrap();
        let mut b = Binding::new();
        b.set(Symbol::Time, 0.0);
        let qdd = [0.3, -0.2, 0.5];
        let qddd = [1.0, 2.0, -1.0];
        for k in 0..3 {
            b.set(Symbol::coord(k, 0), 0.1 + k as f64);
            b.set(Symbol::coord(k, 1), -0.4 * k as f64);
            b.set(Symbol::coord(k, 2), qdd[k]);
            b.set(Symbol::coord(k, 3), qddd[k]);
        }
        // Componentwise: X_k = -m q̈_k + charge E0 δ_{k0} + (2q²/3) q⃛_k.
        for k in 0..3 {
            let field = if k == 0 { 1.0 } else { 0.0 };
            let expected = -qdd[k] + field + 2.0 / 3.0 * qddd[k];
            let got = cm.x_covector[k].eval(&b).unwrap();
            assert!((got - expected).abs() < 1e-12, "component {k}");
        }
    }

    #[test]
    fn zero_charge_flips_classification_to_second_order() {
        let ctx = ParseContext::unconstrained(3);
        let zero = Expression::zero();
        let scenario = lad_nonrelativistic(
            1.0,
            0.0,
            &parse("-q0", &ctx).unwrap(),
            &[zero.clone(), zero.clone(), zero],
        );
        let cm = compile(&scenario.spec).unwrap();
        assert_eq!(cm.class, OrderClass::SecondOrder);
    }

    #[test]
    fn uniform_field_non_runaway_branch_has_zero_jerk() {
        let scenario = canonical_lad_nonrelativistic();
        let cm = compile(&scenario.spec).unwrap();
        let traj = simulate(&cm, &scenario.initial, &scenario.config).unwrap();
        assert_eq!(traj.status, Status::Completed);
        let last = traj.records.last().unwrap();
        // q̈ stays at the branch value and q = t²/2 exactly.
        assert!((last.qdd[0] - 1.0).abs() <= 1e-7);
        assert!((last.q[0] - 0.5 * last.t * last.t).abs() <= 1e-7);
    }

    #[test]
    fn free_param_mass_matrix_annihilates_the_velocity() {
        let scenario = canonical_lad_relativistic_free_param();
        let cm = compile(&scenario.spec).unwrap();
        let qd = [2.5, 0.4, -0.3, 0.7];
        let b = jet4(qd, [0.2, -0.5, 0.3, 0.1], [0.0; 4]);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|k| (0..4).map(|j| cm.mass[k][j].eval(&b).unwrap()).collect())
            .collect();
        for row in &rows {
            let dot: f64 = row.iter().zip(&qd).map(|(m, v)| m * v).sum();
            assert!(dot.abs() < 1e-10, "M·u component {dot}");
        }
        assert!(smallest_singular_value(&rows) < 1e-10);
    }

    #[test]
    fn rejects_bad_relativistic_initial_data() {
        let (m, charge, a_mu, mut initial) = canonical_relativistic_parts();
        initial.qd = vec![0.5, 0.8, 0.0, 0.0];
        let err = lad_relativistic_free_param(m, charge, &a_mu, initial.clone()).unwrap_err();
        assert!(matches!(err, ScenarioError::NonTimelike { .. }));
        let err = lad_relativistic_proper(m, charge, &a_mu, initial).unwrap_err();
        assert!(matches!(err, ScenarioError::Unnormalized { .. }));

        let (m, charge, a_mu, mut initial) = canonical_relativistic_parts();
        initial.qdd = vec![0.3, 0.0, 0.0, 0.0];
        let err = lad_relativistic_proper(m, charge, &a_mu, initial).unwrap_err();
        assert!(matches!(err, ScenarioError::NotOrthogonal { .. }));
    }

    #[test]
    fn free_param_geodesic_without_field() {
        let zero = Expression::zero();
        let a_mu = [zero.clone(), zero.clone(), zero.clone(), zero];
        let initial = JetState::third_order(
            0.0,
            vec![0.0; 4],
            vec![1.0, 0.3, 0.0, 0.0],
            vec![0.0; 4],
        );
        let scenario =
            lad_relativistic_free_param(1.0, std::f64::consts::SQRT_2, &a_mu, initial).unwrap();
        let cm = compile(&scenario.spec).unwrap();
        let config = IntegratorConfig {
            t1: 2.0,
            ..scenario.config.clone()
        };
        let traj = simulate(&cm, &scenario.initial, &config).unwrap();
        assert_eq!(traj.status, Status::Completed);
        for r in &traj.records {
            assert!(r.qdd.iter().all(|a| a.abs() <= 1e-8), "t={}", r.t);
            let uu = minkowski_dot(&r.qd, &r.qd);
            assert!((uu - minkowski_dot(&[1.0, 0.3, 0.0, 0.0], &[1.0, 0.3, 0.0, 0.0])).abs()
                <= 1e-8);
        }
    }

    #[test]
    fn proper_time_normalization_is_preserved() {
        let scenario = canonical_lad_relativistic_proper();
        let cm = compile(&scenario.spec).unwrap();
        let traj = simulate(&cm, &scenario.initial, &scenario.config).unwrap();
        assert_eq!(traj.status, Status::Completed);
        for r in &traj.records {
            let uu = minkowski_dot(&r.qd, &r.qd);
            assert!((uu + 1.0).abs() <= 1e-6, "tau={} u·u={}", r.t, uu);
            let au = minkowski_dot(&r.qd, &r.qdd);
            assert!(au.abs() <= 1e-6, "tau={} a·u={}", r.t, au);
        }
    }

    #[test]
    fn proper_time_solution_satisfies_the_radiation_reaction_equation() {
        // Independent oracle: the classical equation
        //   m a^μ = charge F^μ_ν u^ν + (2/3) q² (ȧ^μ - (a·a) u^μ)
        // coded by hand with explicit metric raising, evaluated along the
        // integrated trajectory with the jerk recovered from the solver.
        let scenario = canonical_lad_relativistic_proper();
        let cm = compile(&scenario.spec).unwrap();
        let traj = simulate(&cm, &scenario.initial, &scenario.config).unwrap();
        let qsq = 2.0000000000000004; // charge² for charge = sqrt(2)
        let e0 = 0.1;
        let charge = std::f64::consts::SQRT_2;
        let n = traj.records.len();
        for idx in [n / 10, n / 2, 9 * n / 10] {
            let r = &traj.records[idx];
            let jerk = eom::jerk_solve(&cm, r.t, &r.q, &r.qd, &r.qdd).unwrap();
            let aa = minkowski_dot(&r.qdd, &r.qdd);
            // F_{10} = -F_{01} = E0 from A_1 = -E0 x0; raising gives
            // F^1_0 = E0 and F^0_1 = E0.
            let force = [e0 * r.qd[1], e0 * r.qd[0], 0.0, 0.0];
            for mu in 0..4 {
                let lhs = r.qdd[mu];
                let rhs = charge * force[mu]
                    + (2.0 / 3.0) * qsq * (jerk.qddd[mu] - aa * r.qd[mu]);
                assert!(
                    (lhs - rhs).abs() <= 1e-5,
                    "tau={} mu={mu} lhs={lhs} rhs={rhs}",
                    r.t
                );
            }
        }
    }

    #[test]
    fn both_relativistic_formulations_trace_the_same_world_line() {
        let free = canonical_lad_relativistic_free_param();
        let proper = canonical_lad_relativistic_proper();
        let config = IntegratorConfig {
            method: Method::Rk4,
            t1: 4.0,
            dt: 0.005,
            ..IntegratorConfig::default()
        };
        let cm_free = compile(&free.spec).unwrap();
        let cm_proper = compile(&proper.spec).unwrap();
        let traj_free = simulate(&cm_free, &free.initial, &config).unwrap();
        let traj_proper = simulate(&cm_proper, &proper.initial, &config).unwrap();
        assert_eq!(traj_free.status, Status::Completed);
        assert_eq!(traj_proper.status, Status::Completed);
        let x0_grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
        let a = worldline_positions(&traj_free.records, &x0_grid).unwrap();
        let b = worldline_positions(&traj_proper.records, &x0_grid).unwrap();
        for (row_a, row_b) in a.iter().zip(&b) {
            for (xa, xb) in row_a.iter().zip(row_b) {
                assert!((xa - xb).abs() <= 1e-5, "{xa} vs {xb}");
            }
        }
    }

    #[test]
    fn registry_lookup_round_trips() {
        for name in names() {
            assert_eq!(by_name(&name).unwrap().name, name);
        }
        assert!(by_name("missing").is_none());
    }
}
