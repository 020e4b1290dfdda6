//! Symbolic expressions over the jet variables of a finite-dimensional
//! mechanical system.
//!
//! An [`Expression`] is an immutable tree shared through [`Arc`], so clones
//! are cheap and repeated subterms created by differentiation or substitution
//! stay shared. The leaf vocabulary is fixed: the time variable `t`,
//! coordinates `q<i>` with total time derivatives up to fourth order
//! (`qd<i>`, `qdd<i>`, `qddd<i>`, `qdddd<i>`), constraint multipliers
//! `lam<i>` and their first derivatives `lamd<i>`, and named scalar
//! parameters. Interior nodes are n-ary sums and products, real powers,
//! negation, quotients, and a small set of unary functions.
//!
//! Evaluation is plain IEEE double arithmetic with left-to-right child
//! order, so results are bit-reproducible for a fixed tree shape.
//!
//! ```
//! use powerlag::expr::{Expression, Symbol, Binding, parse, ParseContext};
//!
//! let ctx = ParseContext::unconstrained(1);
//! let e = parse("m*qdd0 + k*q0", &ctx.with_params(["m", "k"])).unwrap();
//! let mut b = Binding::new();
//! b.set(Symbol::parameter("m"), 2.0);
//! b.set(Symbol::parameter("k"), 0.5);
//! b.set(Symbol::coord(0, 0), 4.0);
//! b.set(Symbol::coord(0, 2), 3.0);
//! assert_eq!(e.eval(&b).unwrap(), 8.0);
//! ```

mod deriv;
mod parse;
mod print;
mod simplify;

pub use deriv::{partial, total_time_derivative, DeriveError};
pub use parse::{is_reserved_name, parse, ParseContext, ParseError};
pub use print::format;
pub use simplify::{normalize, normalize_poly, simplify};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

/// Highest supported total derivative order of a coordinate.
pub const MAX_COORD_ORDER: u8 = 4;
/// Highest supported derivative order of a multiplier.
pub const MAX_MULTIPLIER_ORDER: u8 = 1;

/// A variable that may appear as a leaf of an [`Expression`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    /// The independent variable `t`.
    Time,
    /// `order`-th total time derivative of coordinate `index`; order 0 is
    /// the coordinate itself, capped at [`MAX_COORD_ORDER`].
    Coord { index: usize, order: u8 },
    /// Constraint multiplier `index`, or its first derivative for order 1.
    Multiplier { index: usize, order: u8 },
    /// A named scalar parameter, bound once per model.
    Parameter(String),
}

impl Symbol {
    pub fn coord(index: usize, order: u8) -> Self {
        assert!(order <= MAX_COORD_ORDER, "coordinate order beyond 4");
        Symbol::Coord { index, order }
    }

    pub fn multiplier(index: usize, order: u8) -> Self {
        assert!(order <= MAX_MULTIPLIER_ORDER, "multiplier order beyond 1");
        Symbol::Multiplier { index, order }
    }

    pub fn parameter(name: impl Into<String>) -> Self {
        Symbol::Parameter(name.into())
    }

    /// The symbol holding this one's next total time derivative, if it is
    /// representable in the vocabulary.
    pub fn promote(&self) -> Option<Symbol> {
        match self {
            Symbol::Coord { index, order } if *order < MAX_COORD_ORDER => Some(Symbol::Coord {
                index: *index,
                order: order + 1,
            }),
            Symbol::Multiplier { index, order } if *order < MAX_MULTIPLIER_ORDER => {
                Some(Symbol::Multiplier {
                    index: *index,
                    order: order + 1,
                })
            }
            _ => None,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Time => write!(f, "t"),
            Symbol::Coord { index, order } => {
                write!(f, "q")?;
                for _ in 0..*order {
                    write!(f, "d")?;
                }
                write!(f, "{index}")
            }
            Symbol::Multiplier { index, order } => {
                write!(f, "lam")?;
                if *order == 1 {
                    write!(f, "d")?;
                }
                write!(f, "{index}")
            }
            Symbol::Parameter(name) => write!(f, "{name}"),
        }
    }
}

/// Unary functions understood by the evaluator and the differentiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sgn,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Sgn,
        Func::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sgn => "sgn",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Node shape behind an [`Expression`] handle.
#[derive(Debug)]
pub enum Node {
    Constant(f64),
    Symbol(Symbol),
    /// n-ary sum, evaluated left to right.
    Sum(Vec<Expression>),
    /// n-ary product, evaluated left to right.
    Product(Vec<Expression>),
    /// Base raised to a real literal exponent.
    Power(Expression, f64),
    Negate(Expression),
    Quotient(Expression, Expression),
    Apply(Func, Expression),
}

/// Immutable shared expression tree.
#[derive(Debug, Clone)]
pub struct Expression(Arc<Node>);

impl Expression {
    fn new(node: Node) -> Self {
        Expression(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    /// Stable address of the node, used as a memo key while the tree is alive.
    pub(crate) fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Finite literal constant. Non-finite constants are rejected because
    /// they cannot round-trip through the text form.
    pub fn constant(value: f64) -> Self {
        assert!(value.is_finite(), "expression constants must be finite");
        Expression::new(Node::Constant(value))
    }

    pub fn symbol(sym: Symbol) -> Self {
        Expression::new(Node::Symbol(sym))
    }

    pub fn time() -> Self {
        Expression::symbol(Symbol::Time)
    }

    pub fn coord(index: usize, order: u8) -> Self {
        Expression::symbol(Symbol::coord(index, order))
    }

    pub fn multiplier(index: usize, order: u8) -> Self {
        Expression::symbol(Symbol::multiplier(index, order))
    }

    pub fn parameter(name: impl Into<String>) -> Self {
        Expression::symbol(Symbol::parameter(name))
    }

    pub fn sum(terms: Vec<Expression>) -> Self {
        Expression::new(Node::Sum(terms))
    }

    pub fn product(factors: Vec<Expression>) -> Self {
        Expression::new(Node::Product(factors))
    }

    pub fn pow(&self, exponent: f64) -> Self {
        assert!(exponent.is_finite(), "power exponents must be finite");
        Expression::new(Node::Power(self.clone(), exponent))
    }

    pub fn neg(&self) -> Self {
        Expression::new(Node::Negate(self.clone()))
    }

    pub fn quotient(num: Expression, den: Expression) -> Self {
        Expression::new(Node::Quotient(num, den))
    }

    pub fn apply(func: Func, arg: Expression) -> Self {
        Expression::new(Node::Apply(func, arg))
    }

    pub fn zero() -> Self {
        Expression::constant(0.0)
    }

    pub fn one() -> Self {
        Expression::constant(1.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.node(), Node::Constant(c) if *c == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self.node(), Node::Constant(c) if *c == 1.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.node() {
            Node::Constant(c) => Some(*c),
            _ => None,
        }
    }

    /// All symbols occurring literally in the tree.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        let mut seen = HashMap::new();
        self.collect_symbols(&mut out, &mut seen);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<Symbol>, seen: &mut HashMap<usize, ()>) {
        if seen.insert(self.key(), ()).is_some() {
            return;
        }
        match self.node() {
            Node::Constant(_) => {}
            Node::Symbol(s) => {
                out.insert(s.clone());
            }
            Node::Sum(children) | Node::Product(children) => {
                for c in children {
                    c.collect_symbols(out, seen);
                }
            }
            Node::Power(b, _) | Node::Negate(b) | Node::Apply(_, b) => {
                b.collect_symbols(out, seen)
            }
            Node::Quotient(a, b) => {
                a.collect_symbols(out, seen);
                b.collect_symbols(out, seen);
            }
        }
    }

    /// Highest coordinate derivative order occurring in the tree, if any
    /// coordinate occurs at all.
    pub fn max_coord_order(&self) -> Option<u8> {
        self.free_symbols()
            .iter()
            .filter_map(|s| match s {
                Symbol::Coord { order, .. } => Some(*order),
                _ => None,
            })
            .max()
    }

    pub fn contains_multiplier(&self) -> bool {
        self.free_symbols()
            .iter()
            .any(|s| matches!(s, Symbol::Multiplier { .. }))
    }

    /// Replaces symbol leaves according to `map`, sharing untouched subtrees.
    pub fn substitute(&self, map: &BTreeMap<Symbol, Expression>) -> Expression {
        let mut memo: HashMap<usize, Expression> = HashMap::new();
        self.substitute_memo(map, &mut memo)
    }

    fn substitute_memo(
        &self,
        map: &BTreeMap<Symbol, Expression>,
        memo: &mut HashMap<usize, Expression>,
    ) -> Expression {
        if let Some(hit) = memo.get(&self.key()) {
            return hit.clone();
        }
        let out = match self.node() {
            Node::Constant(_) => self.clone(),
            Node::Symbol(s) => match map.get(s) {
                Some(replacement) => replacement.clone(),
                None => self.clone(),
            },
            Node::Sum(children) => Expression::sum(
                children
                    .iter()
                    .map(|c| c.substitute_memo(map, memo))
                    .collect(),
            ),
            Node::Product(children) => Expression::product(
                children
                    .iter()
                    .map(|c| c.substitute_memo(map, memo))
                    .collect(),
            ),
            Node::Power(b, k) => b.substitute_memo(map, memo).pow(*k),
            Node::Negate(b) => b.substitute_memo(map, memo).neg(),
            Node::Quotient(a, b) => {
                Expression::quotient(a.substitute_memo(map, memo), b.substitute_memo(map, memo))
            }
            Node::Apply(f, b) => Expression::apply(*f, b.substitute_memo(map, memo)),
        };
        memo.insert(self.key(), out.clone());
        out
    }

    /// Replaces every `sgn(u)` node with `tanh(u / epsilon)`.
    pub fn regularize_sgn(&self, epsilon: f64) -> Expression {
        let mut memo: HashMap<usize, Expression> = HashMap::new();
        self.regularize_memo(epsilon, &mut memo)
    }

    fn regularize_memo(&self, eps: f64, memo: &mut HashMap<usize, Expression>) -> Expression {
        if let Some(hit) = memo.get(&self.key()) {
            return hit.clone();
        }
        let out = match self.node() {
            Node::Constant(_) | Node::Symbol(_) => self.clone(),
            Node::Sum(children) => Expression::sum(
                children
                    .iter()
                    .map(|c| c.regularize_memo(eps, memo))
                    .collect(),
            ),
            Node::Product(children) => Expression::product(
                children
                    .iter()
                    .map(|c| c.regularize_memo(eps, memo))
                    .collect(),
            ),
            Node::Power(b, k) => b.regularize_memo(eps, memo).pow(*k),
            Node::Negate(b) => b.regularize_memo(eps, memo).neg(),
            Node::Quotient(a, b) => {
                Expression::quotient(a.regularize_memo(eps, memo), b.regularize_memo(eps, memo))
            }
            Node::Apply(Func::Sgn, b) => {
                let arg = b.regularize_memo(eps, memo);
                Expression::apply(
                    Func::Tanh,
                    Expression::quotient(arg, Expression::constant(eps)),
                )
            }
            Node::Apply(f, b) => Expression::apply(*f, b.regularize_memo(eps, memo)),
        };
        memo.insert(self.key(), out.clone());
        out
    }

    /// Evaluates the tree at `binding`. Every free symbol must be bound.
    pub fn eval(&self, binding: &Binding) -> Result<f64, EvalError> {
        match self.node() {
            Node::Constant(c) => Ok(*c),
            Node::Symbol(s) => binding
                .get(s)
                .ok_or_else(|| EvalError::Unbound { symbol: s.clone() }),
            Node::Sum(children) => {
                let mut acc = 0.0;
                for c in children {
                    acc += c.eval(binding)?;
                }
                Ok(acc)
            }
            Node::Product(children) => {
                let mut acc = 1.0;
                for c in children {
                    acc *= c.eval(binding)?;
                }
                Ok(acc)
            }
            Node::Power(b, k) => {
                let base = b.eval(binding)?;
                eval_power(base, *k).map_err(|message| EvalError::Domain {
                    context: format!("{self}"),
                    message,
                })
            }
            Node::Negate(b) => Ok(-b.eval(binding)?),
            Node::Quotient(a, b) => {
                let num = a.eval(binding)?;
                let den = b.eval(binding)?;
                let v = num / den;
                if v.is_nan() && !num.is_nan() && !den.is_nan() {
                    Err(EvalError::Domain {
                        context: format!("{self}"),
                        message: format!("indeterminate quotient {num}/{den}"),
                    })
                } else {
                    Ok(v)
                }
            }
            Node::Apply(f, b) => {
                let x = b.eval(binding)?;
                eval_func(*f, x).map_err(|message| EvalError::Domain {
                    context: format!("{self}"),
                    message,
                })
            }
        }
    }

    /// Evaluation with per-node caching; same value as [`Expression::eval`]
    /// bit for bit, preferable for heavily shared trees.
    pub fn eval_memo(&self, binding: &Binding) -> Result<f64, EvalError> {
        let mut memo: HashMap<usize, f64> = HashMap::new();
        self.eval_cached(binding, &mut memo)
    }

    fn eval_cached(
        &self,
        binding: &Binding,
        memo: &mut HashMap<usize, f64>,
    ) -> Result<f64, EvalError> {
        if let Some(v) = memo.get(&self.key()) {
            return Ok(*v);
        }
        let v = match self.node() {
            Node::Sum(children) => {
                let mut acc = 0.0;
                for c in children {
                    acc += c.eval_cached(binding, memo)?;
                }
                acc
            }
            Node::Product(children) => {
                let mut acc = 1.0;
                for c in children {
                    acc *= c.eval_cached(binding, memo)?;
                }
                acc
            }
            Node::Power(b, k) => {
                let base = b.eval_cached(binding, memo)?;
                eval_power(base, *k).map_err(|message| EvalError::Domain {
                    context: format!("{self}"),
                    message,
                })?
            }
            Node::Negate(b) => -b.eval_cached(binding, memo)?,
            Node::Quotient(a, b) => {
                let num = a.eval_cached(binding, memo)?;
                let den = b.eval_cached(binding, memo)?;
                let v = num / den;
                if v.is_nan() && !num.is_nan() && !den.is_nan() {
                    return Err(EvalError::Domain {
                        context: format!("{self}"),
                        message: format!("indeterminate quotient {num}/{den}"),
                    });
                }
                v
            }
            Node::Apply(f, b) => {
                let x = b.eval_cached(binding, memo)?;
                eval_func(*f, x).map_err(|message| EvalError::Domain {
                    context: format!("{self}"),
                    message,
                })?
            }
            _ => self.eval(binding)?,
        };
        memo.insert(self.key(), v);
        Ok(v)
    }

    fn rank(&self) -> u8 {
        match self.node() {
            Node::Constant(_) => 0,
            Node::Symbol(_) => 1,
            Node::Apply(_, _) => 2,
            Node::Power(_, _) => 3,
            Node::Negate(_) => 4,
            Node::Quotient(_, _) => 5,
            Node::Product(_) => 6,
            Node::Sum(_) => 7,
        }
    }

    /// Total structural order: used for canonical child sorting and for
    /// structural equality. Distinct trees with equal printed form compare
    /// equal only after [`normalize`].
    pub fn structural_cmp(&self, other: &Expression) -> Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        let r = self.rank().cmp(&other.rank());
        if r != Ordering::Equal {
            return r;
        }
        match (self.node(), other.node()) {
            (Node::Constant(a), Node::Constant(b)) => a.total_cmp(b),
            (Node::Symbol(a), Node::Symbol(b)) => a.cmp(b),
            (Node::Apply(fa, a), Node::Apply(fb, b)) => {
                fa.cmp(fb).then_with(|| a.structural_cmp(b))
            }
            (Node::Power(a, ka), Node::Power(b, kb)) => {
                a.structural_cmp(b).then_with(|| ka.total_cmp(kb))
            }
            (Node::Negate(a), Node::Negate(b)) => a.structural_cmp(b),
            (Node::Quotient(an, ad), Node::Quotient(bn, bd)) => an
                .structural_cmp(bn)
                .then_with(|| ad.structural_cmp(bd)),
            (Node::Product(a), Node::Product(b)) | (Node::Sum(a), Node::Sum(b)) => {
                for (x, y) in a.iter().zip(b.iter()) {
                    let c = x.structural_cmp(y);
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                a.len().cmp(&b.len())
            }
            _ => unreachable!("rank already distinguished the variants"),
        }
    }
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.structural_cmp(other) == Ordering::Equal
    }
}

impl Eq for Expression {}

impl PartialOrd for Expression {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.structural_cmp(other))
    }
}

impl Ord for Expression {
    fn cmp(&self, other: &Self) -> Ordering {
        self.structural_cmp(other)
    }
}

impl std::ops::Add for Expression {
    type Output = Expression;
    fn add(self, rhs: Expression) -> Expression {
        Expression::sum(vec![self, rhs])
    }
}

impl std::ops::Sub for Expression {
    type Output = Expression;
    fn sub(self, rhs: Expression) -> Expression {
        Expression::sum(vec![self, rhs.neg()])
    }
}

impl std::ops::Mul for Expression {
    type Output = Expression;
    fn mul(self, rhs: Expression) -> Expression {
        Expression::product(vec![self, rhs])
    }
}

impl std::ops::Div for Expression {
    type Output = Expression;
    fn div(self, rhs: Expression) -> Expression {
        Expression::quotient(self, rhs)
    }
}

impl std::ops::Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        Expression::neg(&self)
    }
}

/// Deterministic integer power by repeated multiplication.
pub(crate) fn powi_det(base: f64, exp: i64) -> f64 {
    if exp < 0 {
        return 1.0 / powi_det(base, -exp);
    }
    let mut acc = 1.0;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

pub(crate) fn as_small_integer(k: f64) -> Option<i64> {
    if k.fract() == 0.0 && k.abs() <= 64.0 {
        Some(k as i64)
    } else {
        None
    }
}

fn eval_power(base: f64, k: f64) -> Result<f64, String> {
    if let Some(n) = as_small_integer(k) {
        return Ok(powi_det(base, n));
    }
    if base < 0.0 {
        return Err(format!(
            "power of negative base {base} with non-integer exponent {k}"
        ));
    }
    Ok(base.powf(k))
}

fn eval_func(f: Func, x: f64) -> Result<f64, String> {
    match f {
        Func::Sin => Ok(x.sin()),
        Func::Cos => Ok(x.cos()),
        Func::Exp => Ok(x.exp()),
        Func::Log => {
            if x <= 0.0 {
                Err(format!("log of non-positive argument {x}"))
            } else {
                Ok(x.ln())
            }
        }
        Func::Sqrt => {
            if x < 0.0 {
                Err(format!("sqrt of negative argument {x}"))
            } else {
                Ok(x.sqrt())
            }
        }
        Func::Abs => Ok(x.abs()),
        Func::Sgn => Ok(if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }),
        Func::Tanh => Ok(x.tanh()),
    }
}

/// Associative map from [`Symbol`] to value, with dense slots for the jet
/// variables so hot evaluation paths avoid hashing.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    time: Option<f64>,
    coords: Vec<[Option<f64>; 5]>,
    multipliers: Vec<[Option<f64>; 2]>,
    params: BTreeMap<String, f64>,
}

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    pub fn set(&mut self, symbol: Symbol, value: f64) {
        match symbol {
            Symbol::Time => self.time = Some(value),
            Symbol::Coord { index, order } => {
                if self.coords.len() <= index {
                    self.coords.resize(index + 1, [None; 5]);
                }
                self.coords[index][order as usize] = Some(value);
            }
            Symbol::Multiplier { index, order } => {
                if self.multipliers.len() <= index {
                    self.multipliers.resize(index + 1, [None; 2]);
                }
                self.multipliers[index][order as usize] = Some(value);
            }
            Symbol::Parameter(name) => {
                self.params.insert(name, value);
            }
        }
    }

    pub fn with(mut self, symbol: Symbol, value: f64) -> Self {
        self.set(symbol, value);
        self
    }

    pub fn get(&self, symbol: &Symbol) -> Option<f64> {
        match symbol {
            Symbol::Time => self.time,
            Symbol::Coord { index, order } => self
                .coords
                .get(*index)
                .and_then(|slots| slots[*order as usize]),
            Symbol::Multiplier { index, order } => self
                .multipliers
                .get(*index)
                .and_then(|slots| slots[*order as usize]),
            Symbol::Parameter(name) => self.params.get(name).copied(),
        }
    }

    /// Bound symbols in display order, for witness reporting.
    pub fn entries(&self) -> Vec<(Symbol, f64)> {
        let mut out = Vec::new();
        if let Some(t) = self.time {
            out.push((Symbol::Time, t));
        }
        for (i, slots) in self.coords.iter().enumerate() {
            for (order, v) in slots.iter().enumerate() {
                if let Some(v) = v {
                    out.push((Symbol::coord(i, order as u8), *v));
                }
            }
        }
        for (i, slots) in self.multipliers.iter().enumerate() {
            for (order, v) in slots.iter().enumerate() {
                if let Some(v) = v {
                    out.push((Symbol::multiplier(i, order as u8), *v));
                }
            }
        }
        for (name, v) in &self.params {
            out.push((Symbol::parameter(name.clone()), *v));
        }
        out
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entries = self.entries();
        for (i, (sym, v)) in entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{sym}={v}")?;
        }
        Ok(())
    }
}

/// Evaluation failure: an unbound symbol or an argument outside a
/// function's domain.
#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    #[error("unbound symbol `{symbol}`")]
    Unbound { symbol: Symbol },
    #[error("domain error in `{context}`: {message}")]
    Domain { context: String, message: String },
}
