//! Text rendering of expressions.
//!
//! The printed form re-parses to a tree that is structurally equal to the
//! original after [`normalize`](super::normalize); parens are inserted only
//! where precedence requires them. Floats use the shortest decimal form
//! that round-trips, so formatted text is platform-stable.

use super::{Expression, Node};
use std::fmt;

/// Precedence levels: sums bind loosest, then products and quotients,
/// then powers; atoms never need parens.
const P_SUM: u8 = 1;
const P_PROD: u8 = 2;
const P_POW: u8 = 3;
const P_ATOM: u8 = 4;

fn prec(e: &Expression) -> u8 {
    match e.node() {
        Node::Sum(_) | Node::Negate(_) => P_SUM,
        Node::Product(_) | Node::Quotient(..) => P_PROD,
        Node::Power(_, _) => P_POW,
        Node::Constant(c) if *c < 0.0 => P_SUM,
        Node::Constant(_) | Node::Symbol(_) | Node::Apply(_, _) => P_ATOM,
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_at(e: &Expression, min_prec: u8, out: &mut String) {
    let needs_parens = prec(e) < min_prec;
    if needs_parens {
        out.push('(');
    }
    match e.node() {
        Node::Constant(c) => out.push_str(&fmt_f64(*c)),
        Node::Symbol(s) => out.push_str(&s.to_string()),
        Node::Sum(children) => {
            if children.is_empty() {
                out.push('0');
            }
            for (i, child) in children.iter().enumerate() {
                if i == 0 {
                    write_at(child, P_SUM, out);
                } else if let Node::Negate(inner) = child.node() {
                    out.push_str(" - ");
                    write_at(inner, P_PROD, out);
                } else if matches!(child.node(), Node::Constant(c) if *c < 0.0) {
                    out.push_str(" - ");
                    out.push_str(&fmt_f64(-child.as_constant().unwrap()));
                } else {
                    out.push_str(" + ");
                    write_at(child, P_PROD, out);
                }
            }
        }
        Node::Product(children) => {
            if children.is_empty() {
                out.push('1');
            }
            for (i, child) in children.iter().enumerate() {
                if i > 0 {
                    out.push('*');
                }
                // A leading negative constant may print bare: `-2*x`
                // re-parses to an equivalent tree. A quotient after the
                // first slot needs parens, since `a*b/c` re-parses with the
                // division applied to the whole prefix.
                let floor = if i == 0 && matches!(child.node(), Node::Constant(c) if *c < 0.0) {
                    P_SUM
                } else if i > 0 && matches!(child.node(), Node::Quotient(..)) {
                    P_POW
                } else {
                    P_PROD
                };
                write_at(child, floor, out);
            }
        }
        Node::Power(base, k) => {
            write_at(base, P_ATOM, out);
            out.push('^');
            out.push_str(&fmt_f64(*k));
        }
        Node::Negate(inner) => {
            out.push('-');
            write_at(inner, P_PROD, out);
        }
        Node::Quotient(num, den) => {
            write_at(num, P_PROD, out);
            out.push('/');
            write_at(den, P_POW, out);
        }
        Node::Apply(f, arg) => {
            out.push_str(f.name());
            out.push('(');
            write_at(arg, P_SUM, out);
            out.push(')');
        }
    }
    if needs_parens {
        out.push(')');
    }
}

/// Renders `e` in the parseable surface syntax.
pub fn format(e: &Expression) -> String {
    let mut out = String::new();
    write_at(e, P_SUM, &mut out);
    out
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format(self))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Expression, Func};

    #[test]
    fn simple_product_prints_compactly() {
        let e = Expression::product(vec![Expression::constant(2.0), Expression::coord(0, 0)]);
        assert_eq!(e.to_string(), "2*q0");
    }

    #[test]
    fn sums_with_negated_terms_use_minus() {
        let e = Expression::coord(0, 0) - Expression::coord(0, 1);
        assert_eq!(e.to_string(), "q0 - qd0");
    }

    #[test]
    fn nested_sums_are_parenthesized() {
        let inner = Expression::coord(0, 0) + Expression::time();
        let e = Expression::product(vec![Expression::constant(3.0), inner]);
        assert_eq!(e.to_string(), "3*(q0 + t)");
    }

    #[test]
    fn powers_of_compound_bases_take_parens() {
        let e = (Expression::coord(0, 0) + Expression::one()).pow(2.0);
        assert_eq!(e.to_string(), "(q0 + 1)^2");
        let neg = Expression::coord(0, 0).neg().pow(2.0);
        assert_eq!(neg.to_string(), "(-q0)^2");
    }

    #[test]
    fn negative_exponent_prints_bare() {
        let e = Expression::coord(0, 0).pow(-0.5);
        assert_eq!(e.to_string(), "q0^-0.5");
    }

    #[test]
    fn quotient_denominator_is_guarded() {
        let e = Expression::quotient(
            Expression::coord(0, 0),
            Expression::product(vec![Expression::constant(2.0), Expression::time()]),
        );
        assert_eq!(e.to_string(), "q0/(2*t)");
    }

    #[test]
    fn functions_and_derivative_symbols() {
        let e = Expression::apply(Func::Sgn, Expression::coord(2, 1));
        assert_eq!(e.to_string(), "sgn(qd2)");
        assert_eq!(Expression::coord(0, 4).to_string(), "qdddd0");
        assert_eq!(Expression::multiplier(1, 1).to_string(), "lamd1");
    }
}
