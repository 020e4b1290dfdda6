//! Exact symbolic differentiation.
//!
//! [`partial`] treats every jet slot as an independent variable, which is
//! what the covector assembly needs. [`total_time_derivative`] is the formal
//! operator that promotes each jet symbol by one order; it fails if the
//! input already holds fourth-order coordinates or first-order multipliers,
//! since their derivatives fall outside the symbol vocabulary.
//!
//! Derivative convention at kinks: d(abs)/dx = sgn(x) and d(sgn)/dx = 0
//! everywhere, the measure-zero convention. Models that need a smooth
//! friction force opt into the `sgn -> tanh(x/eps)` rewrite at compile time.

use super::{Expression, Func, Node, Symbol};
use std::collections::HashMap;

/// Total-derivative failure: the result would need a symbol beyond the
/// supported derivative orders.
#[derive(Debug, Clone, thiserror::Error)]
pub enum DeriveError {
    #[error("total time derivative of `{symbol}` exceeds the supported order")]
    OrderOverflow { symbol: Symbol },
}

fn mul2(a: Expression, b: Expression) -> Expression {
    if a.is_zero() || b.is_zero() {
        Expression::zero()
    } else if a.is_one() {
        b
    } else if b.is_one() {
        a
    } else {
        Expression::product(vec![a, b])
    }
}

fn chain(outer: Expression, inner_deriv: Expression) -> Expression {
    mul2(outer, inner_deriv)
}

type Memo = HashMap<usize, Expression>;

/// Partial derivative of `e` with respect to the symbol `s`, treating all
/// other symbols (including other jet orders of the same coordinate) as
/// independent.
pub fn partial(e: &Expression, s: &Symbol) -> Expression {
    let mut memo = Memo::new();
    partial_memo(e, s, &mut memo)
}

fn partial_memo(e: &Expression, s: &Symbol, memo: &mut Memo) -> Expression {
    if let Some(hit) = memo.get(&e.key()) {
        return hit.clone();
    }
    let out = match e.node() {
        Node::Constant(_) => Expression::zero(),
        Node::Symbol(sym) => {
            if sym == s {
                Expression::one()
            } else {
                Expression::zero()
            }
        }
        Node::Sum(children) => {
            let terms: Vec<Expression> = children
                .iter()
                .map(|c| partial_memo(c, s, memo))
                .filter(|d| !d.is_zero())
                .collect();
            match terms.len() {
                0 => Expression::zero(),
                1 => terms.into_iter().next().unwrap(),
                _ => Expression::sum(terms),
            }
        }
        Node::Product(children) => {
            // Generalized product rule; factors with zero derivative are
            // skipped up front to keep the tree small.
            let derivs: Vec<Expression> =
                children.iter().map(|c| partial_memo(c, s, memo)).collect();
            let mut terms = Vec::new();
            for (i, d) in derivs.iter().enumerate() {
                if d.is_zero() {
                    continue;
                }
                let mut factors: Vec<Expression> = Vec::with_capacity(children.len());
                for (j, c) in children.iter().enumerate() {
                    if j == i {
                        if !d.is_one() {
                            factors.push(d.clone());
                        }
                    } else {
                        factors.push(c.clone());
                    }
                }
                terms.push(match factors.len() {
                    0 => Expression::one(),
                    1 => factors.into_iter().next().unwrap(),
                    _ => Expression::product(factors),
                });
            }
            match terms.len() {
                0 => Expression::zero(),
                1 => terms.into_iter().next().unwrap(),
                _ => Expression::sum(terms),
            }
        }
        Node::Power(base, k) => {
            let db = partial_memo(base, s, memo);
            if db.is_zero() || *k == 0.0 {
                Expression::zero()
            } else {
                let reduced = if *k == 1.0 {
                    Expression::one()
                } else if *k == 2.0 {
                    base.clone()
                } else {
                    base.pow(k - 1.0)
                };
                mul2(mul2(Expression::constant(*k), reduced), db)
            }
        }
        Node::Negate(inner) => {
            let d = partial_memo(inner, s, memo);
            if d.is_zero() {
                d
            } else {
                d.neg()
            }
        }
        Node::Quotient(num, den) => {
            let dn = partial_memo(num, s, memo);
            let dd = partial_memo(den, s, memo);
            if dn.is_zero() && dd.is_zero() {
                Expression::zero()
            } else if dd.is_zero() {
                Expression::quotient(dn, den.clone())
            } else {
                let lhs = mul2(dn, den.clone());
                let rhs = mul2(num.clone(), dd);
                Expression::quotient(lhs - rhs, den.pow(2.0))
            }
        }
        Node::Apply(f, arg) => {
            let da = partial_memo(arg, s, memo);
            if da.is_zero() {
                Expression::zero()
            } else {
                let outer = match f {
                    Func::Sin => Expression::apply(Func::Cos, arg.clone()),
                    Func::Cos => Expression::apply(Func::Sin, arg.clone()).neg(),
                    Func::Exp => Expression::apply(Func::Exp, arg.clone()),
                    Func::Log => {
                        return {
                            let out = Expression::quotient(da, arg.clone());
                            memo.insert(e.key(), out.clone());
                            out
                        }
                    }
                    Func::Sqrt => Expression::quotient(
                        Expression::one(),
                        mul2(
                            Expression::constant(2.0),
                            Expression::apply(Func::Sqrt, arg.clone()),
                        ),
                    ),
                    Func::Abs => Expression::apply(Func::Sgn, arg.clone()),
                    Func::Sgn => Expression::zero(),
                    Func::Tanh => {
                        Expression::one() - Expression::apply(Func::Tanh, arg.clone()).pow(2.0)
                    }
                };
                chain(outer, da)
            }
        }
    };
    memo.insert(e.key(), out.clone());
    out
}

/// Formal total time derivative:
/// `De = de/dt + sum_k sum_o de/dq^(o)_k * q^(o+1)_k + sum_a de/dlam_a * lamd_a`.
///
/// Errors if `e` literally contains a symbol whose promotion falls outside
/// the vocabulary (fourth-order coordinates, first-order multipliers).
pub fn total_time_derivative(e: &Expression) -> Result<Expression, DeriveError> {
    let free = e.free_symbols();
    for sym in &free {
        match sym {
            Symbol::Coord { .. } | Symbol::Multiplier { .. } => {
                if sym.promote().is_none() {
                    return Err(DeriveError::OrderOverflow {
                        symbol: sym.clone(),
                    });
                }
            }
            Symbol::Time | Symbol::Parameter(_) => {}
        }
    }
    let mut terms = Vec::new();
    let dt = partial(e, &Symbol::Time);
    if !dt.is_zero() {
        terms.push(dt);
    }
    for sym in &free {
        let promoted = match sym.promote() {
            Some(p) => p,
            None => continue,
        };
        let d = partial(e, sym);
        if d.is_zero() {
            continue;
        }
        terms.push(mul2(d, Expression::symbol(promoted)));
    }
    Ok(match terms.len() {
        0 => Expression::zero(),
        1 => terms.into_iter().next().unwrap(),
        _ => Expression::sum(terms),
    })
}
