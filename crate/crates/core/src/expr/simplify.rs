//! Canonicalization passes.
//!
//! Three levels, each deterministic:
//!
//! * [`simplify`]: local rewrites only. Flattens nested sums and products,
//!   folds finite constants in a fixed order, absorbs zeros and ones, pulls
//!   signs out of products and quotients, and turns division by a constant
//!   into multiplication by its reciprocal. Never folds anything whose
//!   result would be non-finite or outside the function's domain.
//! * [`normalize`]: [`simplify`] plus a recursive structural sort of sum and
//!   product operands, so structurally equal inputs become pointer-distinct
//!   but `==`-equal trees. This is the round-trip form: parsing the printed
//!   form of a normalized expression and normalizing again is the identity.
//! * [`normalize_poly`]: full distribution into a sum of monomials with
//!   merged factor exponents and deterministically folded coefficients.
//!   Used wherever two differently-derived expressions must agree
//!   byte-for-byte once printed.

use super::{as_small_integer, powi_det, Expression, Func, Node};
use std::collections::{BTreeMap, HashMap};

/// Rewrite cache keyed by node address. The key's node is pinned inside the
/// map so its address cannot be recycled by a later allocation, which would
/// alias two distinct nodes onto one entry.
#[derive(Default)]
struct Memo(HashMap<usize, (Expression, Expression)>);

impl Memo {
    fn new() -> Self {
        Memo::default()
    }

    fn get(&self, e: &Expression) -> Option<Expression> {
        self.0.get(&e.key()).map(|(_, out)| out.clone())
    }

    fn insert(&mut self, e: &Expression, out: Expression) {
        self.0.insert(e.key(), (e.clone(), out));
    }
}

/// Apply local rewrites bottom-up. Preserves evaluation semantics except on
/// measure-zero sets (for example `0 * u -> 0` even where `u` has a
/// singularity) and up to floating-point reassociation of constants.
pub fn simplify(e: &Expression) -> Expression {
    let mut memo = Memo::new();
    simplify_memo(e, &mut memo)
}

/// [`simplify`] followed by a recursive sort of sum and product operands
/// under the structural total order.
pub fn normalize(e: &Expression) -> Expression {
    sort_rec(&simplify(e), &mut Memo::new())
}

fn simplify_memo(e: &Expression, memo: &mut Memo) -> Expression {
    if let Some(hit) = memo.get(e) {
        return hit;
    }
    let out = match e.node() {
        Node::Constant(c) => {
            // Canonicalize the zero sign so structural equality matches
            // numeric equality.
            if *c == 0.0 {
                Expression::zero()
            } else {
                e.clone()
            }
        }
        Node::Symbol(_) => e.clone(),
        Node::Sum(children) => {
            let kids: Vec<Expression> = children.iter().map(|c| simplify_memo(c, memo)).collect();
            rebuild_sum(kids)
        }
        Node::Product(children) => {
            let kids: Vec<Expression> = children.iter().map(|c| simplify_memo(c, memo)).collect();
            rebuild_product(kids)
        }
        Node::Power(base, k) => simplify_power(simplify_memo(base, memo), *k, memo),
        Node::Negate(inner) => negate_of(simplify_memo(inner, memo)),
        Node::Quotient(num, den) => {
            let n = simplify_memo(num, memo);
            let d = simplify_memo(den, memo);
            simplify_quotient(n, d, memo)
        }
        Node::Apply(f, arg) => simplify_apply(*f, simplify_memo(arg, memo)),
    };
    memo.insert(e, out.clone());
    out
}

/// Flatten, fold constants at the first constant's position, drop zeros.
/// If the fold overflows, the constants stay where they were.
fn rebuild_sum(kids: Vec<Expression>) -> Expression {
    enum Item {
        Const(f64),
        Term(Expression),
    }
    let mut items = Vec::new();
    for kid in kids {
        match kid.node() {
            Node::Sum(inner) => {
                for g in inner {
                    match g.as_constant() {
                        Some(c) => items.push(Item::Const(c)),
                        None => items.push(Item::Term(g.clone())),
                    }
                }
            }
            Node::Constant(c) => items.push(Item::Const(*c)),
            _ => items.push(Item::Term(kid)),
        }
    }
    let folded = items
        .iter()
        .filter_map(|i| match i {
            Item::Const(c) => Some(*c),
            Item::Term(_) => None,
        })
        .fold(0.0f64, |a, c| a + c);
    if !folded.is_finite() {
        let all: Vec<Expression> = items
            .into_iter()
            .map(|i| match i {
                Item::Const(c) => Expression::constant(c),
                Item::Term(t) => t,
            })
            .collect();
        return Expression::sum(all);
    }
    let mut out = Vec::new();
    let mut const_slot = None;
    for item in items {
        match item {
            Item::Const(_) => {
                if const_slot.is_none() {
                    const_slot = Some(out.len());
                }
            }
            Item::Term(t) => out.push(t),
        }
    }
    if folded != 0.0 || out.is_empty() {
        let at = const_slot.unwrap_or(out.len()).min(out.len());
        out.insert(at, Expression::constant(if folded == 0.0 { 0.0 } else { folded }));
    }
    match out.len() {
        1 => out.into_iter().next().unwrap(),
        _ => Expression::sum(out),
    }
}

/// Flatten, strip signs, fold the constant coefficient to the front.
/// A zero coefficient collapses the whole product.
fn rebuild_product(kids: Vec<Expression>) -> Expression {
    enum Item {
        Const(f64),
        Factor(Expression),
    }
    let mut items = Vec::new();
    fn push(items: &mut Vec<Item>, e: Expression) {
        match e.node() {
            Node::Product(inner) => {
                for g in inner {
                    push(items, g.clone());
                }
            }
            Node::Constant(c) => items.push(Item::Const(*c)),
            Node::Negate(x) => {
                items.push(Item::Const(-1.0));
                push(items, x.clone());
            }
            _ => items.push(Item::Factor(e)),
        }
    }
    for kid in kids {
        push(&mut items, kid);
    }
    let coeff = items
        .iter()
        .filter_map(|i| match i {
            Item::Const(c) => Some(*c),
            Item::Factor(_) => None,
        })
        .fold(1.0f64, |a, c| a * c);
    if !coeff.is_finite() {
        let all: Vec<Expression> = items
            .into_iter()
            .map(|i| match i {
                Item::Const(c) => Expression::constant(c),
                Item::Factor(t) => t,
            })
            .collect();
        return Expression::product(all);
    }
    if coeff == 0.0 {
        return Expression::zero();
    }
    let factors: Vec<Expression> = items
        .into_iter()
        .filter_map(|i| match i {
            Item::Factor(t) if !t.is_one() => Some(t),
            _ => None,
        })
        .collect();
    assemble_product(coeff, factors)
}

fn assemble_product(coeff: f64, factors: Vec<Expression>) -> Expression {
    if factors.is_empty() {
        return Expression::constant(coeff);
    }
    let core = match factors.len() {
        1 => factors.into_iter().next().unwrap(),
        _ => Expression::product(factors),
    };
    if coeff == 1.0 {
        core
    } else if coeff == -1.0 {
        core.neg()
    } else {
        let mut with_coeff = vec![Expression::constant(coeff)];
        match core.node() {
            Node::Product(inner) => with_coeff.extend(inner.iter().cloned()),
            _ => with_coeff.push(core),
        }
        Expression::product(with_coeff)
    }
}

fn simplify_power(base: Expression, k: f64, memo: &mut Memo) -> Expression {
    if k == 0.0 {
        return Expression::one();
    }
    if k == 1.0 {
        return base;
    }
    if let Some(c) = base.as_constant() {
        let folded = match as_small_integer(k) {
            Some(ki) => Some(powi_det(c, ki)),
            None if c >= 0.0 => Some(c.powf(k)),
            None => None,
        };
        if let Some(v) = folded {
            if v.is_finite() {
                return Expression::constant(v);
            }
        }
        return base.pow(k);
    }
    if let Some(ki) = as_small_integer(k) {
        match base.node() {
            // (-u)^k for integer k resolves the sign.
            Node::Negate(inner) => {
                let p = simplify_power(inner.clone(), k, memo);
                return if ki % 2 == 0 { p } else { negate_of(p) };
            }
            // (u^a)^k = u^(a*k) holds wherever u^a is defined and k is an
            // integer.
            Node::Power(inner, a) => {
                let combined = a * k;
                if combined.is_finite() {
                    return simplify_power(inner.clone(), combined, memo);
                }
            }
            _ => {}
        }
    }
    base.pow(k)
}

fn negate_of(inner: Expression) -> Expression {
    match inner.node() {
        Node::Constant(c) => {
            if *c == 0.0 {
                Expression::zero()
            } else {
                Expression::constant(-c)
            }
        }
        Node::Negate(x) => x.clone(),
        Node::Product(children) => {
            if let Some(c) = children[0].as_constant() {
                let mut rest: Vec<Expression> = children[1..].to_vec();
                if -c == 1.0 {
                    match rest.len() {
                        1 => rest.into_iter().next().unwrap(),
                        _ => Expression::product(rest),
                    }
                } else {
                    rest.insert(0, Expression::constant(-c));
                    Expression::product(rest)
                }
            } else {
                inner.neg()
            }
        }
        _ => inner.neg(),
    }
}

fn simplify_quotient(num: Expression, den: Expression, memo: &mut Memo) -> Expression {
    if num.is_zero() {
        return Expression::zero();
    }
    if den.is_one() {
        return num;
    }
    // Pull signs out of both sides so `(-a)/b`, `-(a/b)` and a negative
    // leading coefficient all land on the same tree.
    let (num, flip_n) = strip_sign(num);
    let (den, flip_d) = strip_sign(den);
    let flip = flip_n ^ flip_d;
    let core = if let Some(c) = den.as_constant() {
        let inv = 1.0 / c;
        if inv.is_finite() {
            if let Some(a) = num.as_constant() {
                let v = a / c;
                if v.is_finite() {
                    Expression::constant(v)
                } else {
                    Expression::quotient(num, den)
                }
            } else {
                // Reassemble through the product path so the reciprocal
                // merges with an existing coefficient.
                let fresh = Expression::product(vec![Expression::constant(inv), num]);
                simplify_memo(&fresh, memo)
            }
        } else {
            Expression::quotient(num, den)
        }
    } else {
        Expression::quotient(num, den)
    };
    if flip {
        negate_of(core)
    } else {
        core
    }
}

fn strip_sign(e: Expression) -> (Expression, bool) {
    match e.node() {
        Node::Negate(x) => (x.clone(), true),
        Node::Constant(c) if *c < 0.0 => (Expression::constant(-*c), true),
        Node::Product(children) => match children.first().and_then(|f| f.as_constant()) {
            Some(c) if c < 0.0 => (negate_of(e.clone()), true),
            _ => (e, false),
        },
        _ => (e, false),
    }
}

fn simplify_apply(f: Func, arg: Expression) -> Expression {
    if let Some(c) = arg.as_constant() {
        let folded = match f {
            Func::Sin => Some(c.sin()),
            Func::Cos => Some(c.cos()),
            Func::Exp => Some(c.exp()),
            Func::Log => (c > 0.0).then(|| c.ln()),
            Func::Sqrt => (c >= 0.0).then(|| c.sqrt()),
            Func::Abs => Some(c.abs()),
            Func::Sgn => Some(if c > 0.0 {
                1.0
            } else if c < 0.0 {
                -1.0
            } else {
                0.0
            }),
            Func::Tanh => Some(c.tanh()),
        };
        if let Some(v) = folded {
            if v.is_finite() {
                return Expression::constant(v);
            }
        }
        return Expression::apply(f, arg);
    }
    if f == Func::Abs {
        match arg.node() {
            Node::Negate(x) => return Expression::apply(Func::Abs, x.clone()),
            Node::Apply(Func::Abs, _) => return arg,
            _ => {}
        }
    }
    Expression::apply(f, arg)
}

/// Recursively sort sum and product operands by the structural order.
fn sort_rec(e: &Expression, memo: &mut Memo) -> Expression {
    if let Some(hit) = memo.get(e) {
        return hit;
    }
    let out = match e.node() {
        Node::Constant(_) | Node::Symbol(_) => e.clone(),
        Node::Sum(children) => {
            let mut kids: Vec<Expression> = children.iter().map(|c| sort_rec(c, memo)).collect();
            kids.sort();
            Expression::sum(kids)
        }
        Node::Product(children) => {
            let mut kids: Vec<Expression> = children.iter().map(|c| sort_rec(c, memo)).collect();
            kids.sort();
            Expression::product(kids)
        }
        Node::Power(base, k) => sort_rec(base, memo).pow(*k),
        Node::Negate(inner) => sort_rec(inner, memo).neg(),
        Node::Quotient(num, den) => {
            Expression::quotient(sort_rec(num, memo), sort_rec(den, memo))
        }
        Node::Apply(f, arg) => Expression::apply(*f, sort_rec(arg, memo)),
    };
    memo.insert(e, out.clone());
    out
}

/// One monomial of the distributed form: a bag of constant contributions
/// and a bag of (base, exponent) factors, both merged later under a fixed
/// order so the result does not depend on the expansion path.
#[derive(Clone)]
struct Term {
    consts: Vec<f64>,
    factors: Vec<(Expression, f64)>,
}

impl Term {
    fn unit() -> Self {
        Term {
            consts: Vec::new(),
            factors: Vec::new(),
        }
    }

    fn constant(c: f64) -> Self {
        Term {
            consts: vec![c],
            factors: Vec::new(),
        }
    }

    fn factor(base: Expression, exp: f64) -> Self {
        Term {
            consts: Vec::new(),
            factors: vec![(base, exp)],
        }
    }

    fn mul(&self, other: &Term) -> Term {
        let mut out = self.clone();
        out.consts.extend_from_slice(&other.consts);
        out.factors.extend_from_slice(&other.factors);
        out
    }

    fn powi(&self, k: i64) -> Term {
        Term {
            consts: self.consts.iter().map(|c| powi_det(*c, k)).collect(),
            factors: self
                .factors
                .iter()
                .map(|(b, e)| (b.clone(), e * k as f64))
                .collect(),
        }
    }
}

/// Distribute products over sums and integer powers over factors, then
/// collect like monomials with deterministically ordered coefficient folds.
/// Function arguments and opaque power bases are normalized recursively.
pub fn normalize_poly(e: &Expression) -> Expression {
    let simplified = simplify(e);
    let terms = expand_terms(&simplified);
    rebuild_terms(collect_terms(terms))
}

fn expand_terms(e: &Expression) -> Vec<Term> {
    match e.node() {
        Node::Constant(c) => vec![Term::constant(*c)],
        Node::Symbol(_) => vec![Term::factor(e.clone(), 1.0)],
        Node::Sum(children) => children.iter().flat_map(expand_terms).collect(),
        Node::Negate(inner) => expand_terms(inner)
            .into_iter()
            .map(|t| {
                let mut t = t;
                t.consts.push(-1.0);
                t
            })
            .collect(),
        Node::Product(children) => {
            let mut acc = vec![Term::unit()];
            for child in children {
                let rhs = expand_terms(child);
                acc = cross(&acc, &rhs);
            }
            acc
        }
        Node::Quotient(num, den) => {
            let inv = power_terms(den, -1.0);
            cross(&expand_terms(num), &inv)
        }
        Node::Power(base, k) => power_terms(base, *k),
        Node::Apply(f, arg) => vec![Term::factor(
            Expression::apply(*f, normalize_poly(arg)),
            1.0,
        )],
    }
}

fn cross(lhs: &[Term], rhs: &[Term]) -> Vec<Term> {
    let mut out = Vec::with_capacity(lhs.len() * rhs.len());
    for a in lhs {
        for b in rhs {
            out.push(a.mul(b));
        }
    }
    out
}

fn power_terms(base: &Expression, k: f64) -> Vec<Term> {
    let bt = expand_terms(base);
    if let Some(ki) = as_small_integer(k) {
        if ki == 0 {
            return vec![Term::unit()];
        }
        if bt.len() == 1 {
            return vec![bt[0].powi(ki)];
        }
        if (2..=4).contains(&ki) {
            let mut acc = bt.clone();
            for _ in 1..ki {
                acc = cross(&acc, &bt);
            }
            return acc;
        }
    }
    // Opaque power: keep the normalized base as a single factor. A constant
    // base folds when the value is finite and in domain.
    let base_n = rebuild_terms(collect_terms(bt));
    if let Some(c) = base_n.as_constant() {
        let v = match as_small_integer(k) {
            Some(ki) => powi_det(c, ki),
            None if c >= 0.0 => c.powf(k),
            None => f64::NAN,
        };
        if v.is_finite() {
            return vec![Term::constant(v)];
        }
    }
    vec![Term::factor(base_n, k)]
}

#[derive(Clone, PartialEq)]
struct ExpKey(f64);

impl Eq for ExpKey {}

impl PartialOrd for ExpKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExpKey {
    // Reversed so that within a base the higher power sorts first, giving
    // the conventional descending-degree term order.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0)
    }
}

type MonomialKey = Vec<(Expression, ExpKey)>;

fn merge_factors(raw: &[(Expression, f64)]) -> Vec<(Expression, f64)> {
    let mut merged: BTreeMap<Expression, f64> = BTreeMap::new();
    for (base, exp) in raw {
        *merged.entry(base.clone()).or_insert(0.0) += exp;
    }
    // An absolute value raised to an even power sheds the absolute value;
    // re-merge in case the stripped base collides with an existing factor.
    let mut rewritten: BTreeMap<Expression, f64> = BTreeMap::new();
    for (base, exp) in merged {
        if exp == 0.0 {
            continue;
        }
        let even = as_small_integer(exp).map(|k| k % 2 == 0).unwrap_or(false);
        let key = match base.node() {
            Node::Apply(Func::Abs, u) if even => u.clone(),
            _ => base,
        };
        *rewritten.entry(key).or_insert(0.0) += exp;
    }
    rewritten.into_iter().filter(|(_, e)| *e != 0.0).collect()
}

fn collect_terms(terms: Vec<Term>) -> Vec<(Vec<(Expression, f64)>, f64)> {
    let mut grouped: BTreeMap<MonomialKey, (Vec<(Expression, f64)>, Vec<f64>)> = BTreeMap::new();
    for term in terms {
        let factors = merge_factors(&term.factors);
        let key: MonomialKey = factors
            .iter()
            .map(|(b, e)| (b.clone(), ExpKey(*e)))
            .collect();
        let mut consts = term.consts;
        consts.sort_by(|a, b| a.total_cmp(b));
        let coeff = consts.into_iter().fold(1.0f64, |a, c| a * c);
        grouped
            .entry(key)
            .or_insert_with(|| (factors, Vec::new()))
            .1
            .push(coeff);
    }
    let mut out = Vec::new();
    for (_, (factors, mut contribs)) in grouped {
        contribs.sort_by(|a, b| a.total_cmp(b));
        let coeff = contribs.into_iter().fold(0.0f64, |a, c| a + c);
        if coeff != 0.0 {
            out.push((factors, coeff));
        }
    }
    out
}

fn rebuild_terms(collected: Vec<(Vec<(Expression, f64)>, f64)>) -> Expression {
    let mut terms = Vec::new();
    for (factors, coeff) in collected {
        let built: Vec<Expression> = factors
            .into_iter()
            .map(|(b, e)| if e == 1.0 { b } else { b.pow(e) })
            .collect();
        if built.is_empty() {
            terms.push(Expression::constant(coeff));
        } else if coeff < 0.0 {
            terms.push(assemble_product(-coeff, built).neg());
        } else {
            terms.push(assemble_product(coeff, built));
        }
    }
    match terms.len() {
        0 => Expression::zero(),
        1 => terms.into_iter().next().unwrap(),
        _ => Expression::sum(terms),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{format, parse, Binding, ParseContext, Symbol};
    use super::*;

    fn ctx() -> ParseContext {
        ParseContext::unconstrained(2).with_params(["m", "k"])
    }

    fn s(text: &str) -> Expression {
        parse(text, &ctx()).unwrap()
    }

    #[test]
    fn absorbs_units() {
        assert_eq!(format(&simplify(&s("q0 + 0"))), "q0");
        assert_eq!(format(&simplify(&s("1*q0"))), "q0");
        assert_eq!(format(&simplify(&s("0*qd0 + 0"))), "0");
        assert_eq!(format(&simplify(&s("q0^1"))), "q0");
        assert_eq!(format(&simplify(&s("q0^0"))), "1");
    }

    #[test]
    fn folds_constants_and_signs() {
        assert_eq!(format(&simplify(&s("2^3 + 1"))), "9");
        assert_eq!(format(&simplify(&s("-(-q0)"))), "q0");
        assert_eq!(format(&simplify(&s("2*q0*3"))), "6*q0");
        assert_eq!(format(&simplify(&s("-2*q0*3"))), "-6*q0");
        assert_eq!(format(&simplify(&s("q0*-qd0"))), "-q0*qd0");
        assert_eq!(format(&simplify(&s("sin(0) + cos(0)"))), "1");
    }

    #[test]
    fn quotient_by_constant_becomes_reciprocal() {
        assert_eq!(format(&simplify(&s("q0/2"))), "0.5*q0");
        assert_eq!(format(&simplify(&s("6*q0/2"))), "3*q0");
        assert_eq!(format(&simplify(&s("q0/-2"))), "-0.5*q0");
        assert_eq!(format(&simplify(&s("q0/qd0"))), "q0/qd0");
        assert_eq!(format(&simplify(&s("-q0/qd0"))), "-q0/qd0");
    }

    #[test]
    fn integer_power_rules() {
        assert_eq!(format(&simplify(&s("(q0^2)^2"))), "q0^4");
        assert_eq!(format(&simplify(&s("(-q0)^2"))), "q0^2");
        assert_eq!(format(&simplify(&s("(-q0)^3"))), "-q0^3");
        // Fractional outer exponents must not collapse: (q0^2)^0.5 is |q0|.
        assert_eq!(format(&simplify(&s("(q0^2)^0.5"))), "(q0^2)^0.5");
    }

    #[test]
    fn domain_limited_folds_stay_symbolic() {
        assert_eq!(format(&simplify(&s("log(-1)"))), "log(-1)");
        assert_eq!(format(&simplify(&s("sqrt(-4)"))), "sqrt(-4)");
        assert_eq!(format(&simplify(&s("exp(1000)"))), "exp(1000)");
        assert_eq!(format(&simplify(&s("abs(-q0)"))), "abs(q0)");
        assert_eq!(format(&simplify(&s("sgn(-3)"))), "-1");
    }

    #[test]
    fn normalize_orders_operands() {
        let a = normalize(&s("qd0 + q0 + 1"));
        let b = normalize(&s("1 + q0 + qd0"));
        assert_eq!(a, b);
        assert_eq!(format(&a), "1 + q0 + qd0");
        let p = normalize(&s("qd0*2*q0"));
        assert_eq!(format(&p), "2*q0*qd0");
    }

    #[test]
    fn normalize_is_idempotent() {
        for text in [
            "m*qd0^2/2 - k*q0^2/2",
            "q0*(qd0 + 1) - abs(q1)^3",
            "sin(q0)/(2*t) + exp(qd1)",
        ] {
            let once = normalize(&s(text));
            let twice = normalize(&once);
            assert_eq!(once, twice, "normalize not idempotent on {text}");
        }
    }

    #[test]
    fn poly_expands_binomials() {
        assert_eq!(
            format(&normalize_poly(&s("(q0 + qd0)^2"))),
            "q0^2 + 2*q0*qd0 + qd0^2"
        );
        assert_eq!(
            format(&normalize_poly(&s("(q0 + 1)*(q0 - 1)"))),
            "-1 + q0^2"
        );
        assert_eq!(format(&normalize_poly(&s("(2*q0)^3"))), "8*q0^3");
    }

    #[test]
    fn poly_cancels_and_merges() {
        assert_eq!(format(&normalize_poly(&s("q0*qd0 - qd0*q0"))), "0");
        assert_eq!(format(&normalize_poly(&s("q0^2*q0"))), "q0^3");
        assert_eq!(format(&normalize_poly(&s("q0*q0^-1"))), "1");
        assert_eq!(format(&normalize_poly(&s("abs(qd0)^2"))), "qd0^2");
        assert_eq!(format(&normalize_poly(&s("abs(qd0)^3"))), "abs(qd0)^3");
        assert_eq!(format(&normalize_poly(&s("qd0*abs(qd0)^2"))), "qd0^3");
    }

    #[test]
    fn poly_is_path_independent() {
        let lhs = normalize_poly(&s("(q0 + qd0)*(q0 - qd0)"));
        let rhs = normalize_poly(&s("q0^2 - qd0^2"));
        assert_eq!(lhs, rhs);
        assert_eq!(format(&lhs), "q0^2 - qd0^2");
        let a = normalize_poly(&s("m*(q0 + 2)^2 - 4*m*q0"));
        let b = normalize_poly(&s("4*m + m*q0^2"));
        assert_eq!(format(&a), format(&b));
    }

    #[test]
    fn poly_recurses_into_functions_and_quotients() {
        assert_eq!(
            format(&normalize_poly(&s("sin(q0*(1 + 1))"))),
            "sin(2*q0)"
        );
        assert_eq!(format(&normalize_poly(&s("q0/(2*qd0)"))), "0.5*q0*qd0^-1");
        assert_eq!(
            format(&normalize_poly(&s("(q0 + 1)^5"))),
            "(1 + q0)^5"
        );
    }

    #[test]
    fn simplify_preserves_values() {
        let b = Binding::new()
            .with(Symbol::Time, 0.3)
            .with(Symbol::coord(0, 0), 1.7)
            .with(Symbol::coord(0, 1), -0.6)
            .with(Symbol::coord(1, 0), 2.2)
            .with(Symbol::coord(1, 1), 0.4)
            .with(Symbol::parameter("m"), 1.5)
            .with(Symbol::parameter("k"), 2.5);
        for text in [
            "m*qd0^2/2 - k*q0^2/2 + abs(qd0)^3",
            "(q0 + qd0)^2*(q0 - 2)",
            "sin(q0)*cos(qd1) + exp(q1/3)",
            "q0/qd0 + sqrt(q1)/(1 + t)",
        ] {
            let e = s(text);
            let v0 = e.eval(&b).unwrap();
            for pass in [simplify(&e), normalize(&e), normalize_poly(&e)] {
                let v1 = pass.eval(&b).unwrap();
                assert!(
                    (v0 - v1).abs() <= 1e-12 * v0.abs().max(1.0),
                    "{text}: {v0} vs {v1}"
                );
            }
        }
    }
}
