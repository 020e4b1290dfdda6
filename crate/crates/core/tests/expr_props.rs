//! Property tests for the expression layer.
//!
//! The guards here are deliberate: a case is silently accepted when an
//! evaluation leaves the function domain or when the magnitude proxy says
//! the arithmetic is too ill-conditioned for a meaningful comparison.
//! Structural properties (round-trip, idempotence) never skip.

use powerlag::expr::{
    format, normalize, normalize_poly, parse, partial, simplify, total_time_derivative, Binding,
    Expression, Func, Node, ParseContext, Symbol,
};
use proptest::prelude::*;

const N: usize = 3;

fn ctx() -> ParseContext {
    ParseContext::unconstrained(N)
        .with_params(["m", "k"])
        .with_multipliers(1)
}

fn leaf() -> impl Strategy<Value = Expression> {
    prop_oneof![
        4 => (-400i32..=400).prop_map(|n| Expression::constant(f64::from(n) / 100.0)),
        1 => Just(Expression::time()),
        4 => (0usize..N, 0u8..=2).prop_map(|(i, o)| Expression::coord(i, o)),
        1 => Just(Expression::parameter("m")),
        1 => Just(Expression::parameter("k")),
        1 => prop_oneof![Just(0u8), Just(1u8)]
            .prop_map(|o| Expression::multiplier(0, o)),
    ]
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![
        6 => prop_oneof![Just(-3.0), Just(-2.0), Just(-1.0), Just(2.0), Just(3.0), Just(0.0)],
        1 => prop_oneof![Just(0.5), Just(-0.5), Just(1.5)],
    ]
}

fn func() -> impl Strategy<Value = Func> {
    prop_oneof![
        3 => prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Tanh)],
        2 => prop_oneof![Just(Func::Abs), Just(Func::Sgn), Just(Func::Exp)],
        1 => prop_oneof![Just(Func::Sqrt), Just(Func::Log)],
    ]
}

fn expr() -> impl Strategy<Value = Expression> {
    leaf().prop_recursive(3, 24, 3, |inner| {
        prop_oneof![
            3 => prop::collection::vec(inner.clone(), 2..=3).prop_map(Expression::sum),
            3 => prop::collection::vec(inner.clone(), 2..=3).prop_map(Expression::product),
            1 => (inner.clone(), exponent()).prop_map(|(b, k)| b.pow(k)),
            1 => inner.clone().prop_map(|e| e.neg()),
            1 => (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expression::quotient(a, b)),
            2 => (func(), inner.clone()).prop_map(|(f, a)| Expression::apply(f, a)),
        ]
    })
}

fn binding() -> impl Strategy<Value = Binding> {
    let val = -2.0f64..2.0;
    (
        val.clone(),
        prop::collection::vec(val.clone(), N * 4),
        val.clone(),
        val.clone(),
        val.clone(),
        val,
    )
        .prop_map(|(t, jets, m, k, l0, l1)| {
            let mut b = Binding::new()
                .with(Symbol::Time, t)
                .with(Symbol::parameter("m"), m)
                .with(Symbol::parameter("k"), k)
                .with(Symbol::multiplier(0, 0), l0)
                .with(Symbol::multiplier(0, 1), l1);
            for i in 0..N {
                for o in 0..4usize {
                    b.set(Symbol::coord(i, o as u8), jets[i * 4 + o]);
                }
            }
            b
        })
}

/// Upper-bound proxy for the magnitudes flowing through an evaluation.
/// Infinite when anything is out of domain or explosive.
fn mag(e: &Expression, b: &Binding) -> f64 {
    match e.node() {
        Node::Constant(c) => c.abs(),
        Node::Symbol(_) => match e.eval(b) {
            Ok(v) => v.abs(),
            Err(_) => f64::INFINITY,
        },
        Node::Sum(ch) => ch.iter().map(|c| mag(c, b)).sum(),
        Node::Product(ch) => ch.iter().map(|c| mag(c, b)).product(),
        Node::Negate(x) => mag(x, b),
        Node::Power(base, k) => {
            if *k >= 0.0 && k.fract() == 0.0 {
                mag(base, b).powf(*k)
            } else {
                match base.eval(b) {
                    Ok(v) if v != 0.0 => v.abs().powf(*k).abs() + mag(base, b),
                    _ => f64::INFINITY,
                }
            }
        }
        Node::Quotient(num, den) => match den.eval(b) {
            Ok(v) if v != 0.0 => mag(num, b) / v.abs(),
            _ => f64::INFINITY,
        },
        Node::Apply(f, arg) => {
            let a = mag(arg, b);
            match f {
                Func::Sin | Func::Cos | Func::Tanh | Func::Sgn => 1.0 + a.min(1.0),
                Func::Abs => a,
                Func::Exp => {
                    if a > 30.0 {
                        f64::INFINITY
                    } else {
                        a.exp()
                    }
                }
                Func::Sqrt | Func::Log => match e.eval(b) {
                    Ok(w) => w.abs() + 1.0,
                    Err(_) => f64::INFINITY,
                },
            }
        }
    }
}

fn well_conditioned(e: &Expression, b: &Binding) -> Option<f64> {
    let m = mag(e, b);
    (m.is_finite() && m <= 1e6).then_some(m)
}

proptest! {
    // Printing a normalized tree and parsing it back is the identity. This
    // is the contract file emission relies on. It holds only from the
    // normal form: folding constants is sensitive to tree nesting, so two
    // trees that differ by association can normalize to coefficients one
    // ulp apart, but a normalized tree carries each coefficient as a single
    // literal that reparses exactly.
    #[test]
    fn printed_normal_form_reparses_exactly(e in expr()) {
        let n = normalize(&e);
        let text = format(&n);
        let back = parse(&text, &ctx())
            .unwrap_or_else(|err| panic!("failed to reparse `{text}`: {err}"));
        prop_assert_eq!(normalize(&back), n.clone(), "text was `{}`", text);
    }

    // For arbitrary (unnormalized) trees the printed form still reparses to
    // the same values, even when constant folding lands an ulp away.
    #[test]
    fn printed_form_reparses_to_the_same_values(e in expr(), b in binding()) {
        let text = format(&e);
        let back = parse(&text, &ctx())
            .unwrap_or_else(|err| panic!("failed to reparse `{text}`: {err}"));
        if let Some(m) = well_conditioned(&e, &b) {
            if let (Ok(v0), Ok(v1)) = (e.eval(&b), back.eval(&b)) {
                let tol = 1e-12 * (1.0 + m);
                prop_assert!(
                    (v0 - v1).abs() <= tol,
                    "{} vs {} (tol {tol}) on `{}`",
                    v0, v1, text
                );
            }
        }
    }

    #[test]
    fn normalize_is_idempotent(e in expr()) {
        let once = normalize(&e);
        prop_assert_eq!(normalize(&once), once.clone());
    }

    #[test]
    fn normalize_poly_is_idempotent(e in expr()) {
        let once = normalize_poly(&e);
        prop_assert_eq!(normalize_poly(&once), once.clone());
    }

    #[test]
    fn rewrites_preserve_values(e in expr(), b in binding()) {
        if let Some(m) = well_conditioned(&e, &b) {
            if let Ok(v0) = e.eval(&b) {
                for pass in [simplify(&e), normalize(&e), normalize_poly(&e)] {
                    if let Ok(v1) = pass.eval(&b) {
                        let tol = 1e-12 * (1.0 + m);
                        prop_assert!(
                            (v0 - v1).abs() <= tol,
                            "{} vs {} (tol {tol}) on {}",
                            v0, v1, format(&e)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn partial_matches_finite_differences(e in expr(), b in binding()) {
        let free = e.free_symbols();
        for s in &free {
            let d = partial(&e, s);
            let (Some(me), Some(md)) = (well_conditioned(&e, &b), well_conditioned(&d, &b)) else {
                continue;
            };
            let Ok(dv) = d.eval(&b) else { continue };
            let Some(x0) = b.get(s) else { continue };
            let scale = 1.0 + dv.abs() + me + md;
            let probe = |h: f64| -> Option<f64> {
                let mut bp = b.clone();
                bp.set(s.clone(), x0 + h);
                let mut bm = b.clone();
                bm.set(s.clone(), x0 - h);
                match (e.eval(&bp), e.eval(&bm)) {
                    (Ok(p), Ok(q)) if p.is_finite() && q.is_finite() => Some((p - q) / (2.0 * h)),
                    _ => None,
                }
            };
            let h = 1e-5 * (1.0 + x0.abs());
            let (Some(f1), Some(f2)) = (probe(h), probe(h / 2.0)) else { continue };
            // Disagreement between step sizes marks a kink or stiff spot.
            if (f1 - f2).abs() > 1e-4 * scale {
                continue;
            }
            prop_assert!(
                (f2 - dv).abs() <= 1e-3 * scale,
                "d/d{} of {}: symbolic {} vs fd {}",
                s, format(&e), dv, f2
            );
        }
    }

    #[test]
    fn product_rule_holds(a in expr(), c in expr(), b in binding()) {
        let prod = a.clone() * c.clone();
        let Some(m) = well_conditioned(&prod, &b) else { return Ok(()) };
        for s in prod.free_symbols() {
            let lhs = partial(&prod, &s);
            let rhs = partial(&a, &s) * c.clone() + a.clone() * partial(&c, &s);
            if let (Ok(l), Ok(r)) = (lhs.eval(&b), rhs.eval(&b)) {
                prop_assert!(
                    (l - r).abs() <= 1e-10 * (1.0 + m + l.abs()),
                    "product rule on {}: {} vs {}", format(&prod), l, r
                );
            }
        }
    }

    #[test]
    fn mixed_partials_commute(e in expr(), b in binding()) {
        let syms: Vec<Symbol> = e.free_symbols().into_iter().collect();
        if syms.len() < 2 {
            return Ok(());
        }
        let (x, y) = (&syms[0], &syms[syms.len() - 1]);
        let xy = partial(&partial(&e, x), y);
        let yx = partial(&partial(&e, y), x);
        let (Some(mx), Some(my)) = (well_conditioned(&xy, &b), well_conditioned(&yx, &b)) else {
            return Ok(());
        };
        if let (Ok(l), Ok(r)) = (xy.eval(&b), yx.eval(&b)) {
            prop_assert!(
                (l - r).abs() <= 1e-10 * (1.0 + mx + my),
                "Clairaut on {}: {} vs {}", format(&e), l, r
            );
        }
    }

    #[test]
    fn total_derivative_tracks_polynomial_trajectories(e in expr(), b in binding()) {
        // Exclude multiplier symbols: their promoted forms have no
        // trajectory analogue here.
        if e.free_symbols().iter().any(|s| matches!(s, Symbol::Multiplier { .. })) {
            return Ok(());
        }
        let Ok(de) = total_time_derivative(&e) else { return Ok(()) };
        let (Some(me), Some(md)) = (well_conditioned(&e, &b), well_conditioned(&de, &b)) else {
            return Ok(());
        };
        let Ok(dv) = de.eval(&b) else { return Ok(()) };
        let t0 = b.get(&Symbol::Time).unwrap();
        // Cubic trajectories matching the jet at t0; the jet of the curve is
        // exact at every t, so the chain rule is the only thing under test.
        let at = |t: f64| -> Binding {
            let dt = t - t0;
            let mut bt = b.clone();
            bt.set(Symbol::Time, t);
            for i in 0..N {
                let j: Vec<f64> = (0..4u8).map(|o| b.get(&Symbol::coord(i, o)).unwrap()).collect();
                bt.set(
                    Symbol::coord(i, 0),
                    j[0] + j[1] * dt + j[2] * dt * dt / 2.0 + j[3] * dt * dt * dt / 6.0,
                );
                bt.set(Symbol::coord(i, 1), j[1] + j[2] * dt + j[3] * dt * dt / 2.0);
                bt.set(Symbol::coord(i, 2), j[2] + j[3] * dt);
                bt.set(Symbol::coord(i, 3), j[3]);
            }
            bt
        };
        let probe = |h: f64| -> Option<f64> {
            match (e.eval(&at(t0 + h)), e.eval(&at(t0 - h))) {
                (Ok(p), Ok(q)) if p.is_finite() && q.is_finite() => Some((p - q) / (2.0 * h)),
                _ => None,
            }
        };
        let scale = 1.0 + dv.abs() + me + md;
        let (Some(f1), Some(f2)) = (probe(1e-5), probe(5e-6)) else { return Ok(()) };
        if (f1 - f2).abs() > 1e-4 * scale {
            return Ok(());
        }
        prop_assert!(
            (f2 - dv).abs() <= 1e-3 * scale,
            "D along trajectory of {}: symbolic {} vs fd {}",
            format(&e), dv, f2
        );
    }

    #[test]
    fn total_derivative_commutes_with_parameter_partials(e in expr(), b in binding()) {
        let Ok(de) = total_time_derivative(&e) else { return Ok(()) };
        let m = Symbol::parameter("m");
        let lhs = partial(&de, &m);
        let Ok(dm) = total_time_derivative(&partial(&e, &m)) else { return Ok(()) };
        let Some(mm) = well_conditioned(&lhs, &b) else { return Ok(()) };
        if let (Ok(l), Ok(r)) = (lhs.eval(&b), dm.eval(&b)) {
            prop_assert!(
                (l - r).abs() <= 1e-10 * (1.0 + mm + l.abs()),
                "commutation on {}: {} vs {}", format(&e), l, r
            );
        }
    }
}
