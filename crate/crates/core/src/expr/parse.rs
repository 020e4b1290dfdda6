//! Parser for the expression surface syntax.
//!
//! Grammar, loosest to tightest: sums (`+`, binary `-`), products (`*`, `/`,
//! left associative), unary minus, powers (`^`, right associative), atoms.
//! A power's exponent must fold to a numeric constant at parse time; it may
//! itself be a constant expression such as `(1/3)` or `-2`.
//!
//! Identifiers resolve against a [`ParseContext`]: `t`, `q<i>` through
//! `qdddd<i>`, `lam<i>`, `lamd<i>`, the built-in function names, and any
//! declared parameter name. Anything else is rejected with a position.

use super::{Binding, Expression, Func};
use std::collections::BTreeSet;

/// Symbol resolution context: coordinate count, multiplier count, and the
/// declared parameter names.
#[derive(Debug, Clone)]
pub struct ParseContext {
    pub n: usize,
    pub m: usize,
    pub params: BTreeSet<String>,
}

impl ParseContext {
    /// Context with `n` coordinates, no multipliers, no parameters.
    pub fn unconstrained(n: usize) -> Self {
        ParseContext {
            n,
            m: 0,
            params: BTreeSet::new(),
        }
    }

    pub fn with_params<I, S>(mut self, params: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.params.extend(params.into_iter().map(Into::into));
        self
    }

    pub fn with_multipliers(mut self, m: usize) -> Self {
        self.m = m;
        self
    }
}

/// Returns true when `name` collides with the reserved identifier forms and
/// therefore cannot be used as a parameter name.
pub fn is_reserved_name(name: &str) -> bool {
    if name == "t" || Func::from_name(name).is_some() {
        return true;
    }
    classify_jet_ident(name).is_some()
}

/// Splits a reserved jet identifier into its kind. Returns
/// `Some((is_multiplier, order, index))` for well-formed jet names with any
/// derivative order (range checks happen later).
fn classify_jet_ident(name: &str) -> Option<(bool, usize, usize)> {
    let (is_multiplier, rest) = if let Some(rest) = name.strip_prefix("lam") {
        (true, rest)
    } else if let Some(rest) = name.strip_prefix('q') {
        (false, rest)
    } else {
        return None;
    };
    let order = rest.chars().take_while(|c| *c == 'd').count();
    let digits = &rest[order..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let index: usize = digits.parse().ok()?;
    Some((is_multiplier, order, index))
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("parse error at {line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    let err = |line: usize, col: usize, message: String| ParseError { line, col, message };
    while i < bytes.len() {
        let c = bytes[i] as char;
        let (tline, tcol) = (line, col);
        let advance = |i: &mut usize, line: &mut usize, col: &mut usize| {
            if bytes[*i] == b'\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                advance(&mut i, &mut line, &mut col);
            }
            '+' | '-' | '*' | '/' | '^' | '(' | ')' => {
                out.push(Spanned {
                    tok: match c {
                        '+' => Tok::Plus,
                        '-' => Tok::Minus,
                        '*' => Tok::Star,
                        '/' => Tok::Slash,
                        '^' => Tok::Caret,
                        '(' => Tok::LParen,
                        _ => Tok::RParen,
                    },
                    line: tline,
                    col: tcol,
                });
                advance(&mut i, &mut line, &mut col);
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    advance(&mut i, &mut line, &mut col);
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mark = i;
                    advance(&mut i, &mut line, &mut col);
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        advance(&mut i, &mut line, &mut col);
                    }
                    if i < bytes.len() && bytes[i].is_ascii_digit() {
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            advance(&mut i, &mut line, &mut col);
                        }
                    } else {
                        // Not an exponent after all (`2e` before an ident):
                        // rewind to treat `e` as the next token.
                        col -= i - mark;
                        i = mark;
                    }
                }
                let lexeme = &text[start..i];
                let value: f64 = lexeme.parse().map_err(|_| {
                    err(tline, tcol, format!("malformed numeric literal `{lexeme}`"))
                })?;
                if !value.is_finite() {
                    return Err(err(
                        tline,
                        tcol,
                        format!("numeric literal `{lexeme}` overflows"),
                    ));
                }
                out.push(Spanned {
                    tok: Tok::Num(value),
                    line: tline,
                    col: tcol,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    advance(&mut i, &mut line, &mut col);
                }
                out.push(Spanned {
                    tok: Tok::Ident(text[start..i].to_string()),
                    line: tline,
                    col: tcol,
                });
            }
            other => {
                return Err(err(tline, tcol, format!("unexpected character `{other}`")));
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    ctx: &'a ParseContext,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, at: &Spanned, message: impl Into<String>) -> ParseError {
        ParseError {
            line: at.line,
            col: at.col,
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        let next = self.bump();
        if next.tok == tok {
            Ok(())
        } else {
            Err(self.error(&next, format!("expected {what}")))
        }
    }

    fn parse_sum(&mut self) -> Result<Expression, ParseError> {
        let mut terms = vec![self.parse_prod()?];
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.parse_prod()?);
                }
                Tok::Minus => {
                    self.bump();
                    terms.push(self.parse_prod()?.neg());
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expression::sum(terms)
        })
    }

    fn parse_prod(&mut self) -> Result<Expression, ParseError> {
        let mut factors = vec![self.parse_unary()?];
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    factors.push(self.parse_unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    let den = self.parse_unary()?;
                    let num = if factors.len() == 1 {
                        factors.pop().unwrap()
                    } else {
                        Expression::product(std::mem::take(&mut factors))
                    };
                    factors = vec![Expression::quotient(num, den)];
                }
                _ => break,
            }
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Expression::product(factors)
        })
    }

    fn parse_unary(&mut self) -> Result<Expression, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            Ok(self.parse_unary()?.neg())
        } else {
            self.parse_power()
        }
    }

    fn parse_power(&mut self) -> Result<Expression, ParseError> {
        let base = self.parse_atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        let caret = self.bump();
        let exponent_expr = self.parse_unary()?;
        let exponent = exponent_expr
            .eval(&Binding::new())
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                self.error(
                    &caret,
                    "power exponent must fold to a finite numeric constant",
                )
            })?;
        Ok(base.pow(exponent))
    }

    fn parse_atom(&mut self) -> Result<Expression, ParseError> {
        let next = self.bump();
        match next.tok {
            Tok::Num(v) => Ok(Expression::constant(v)),
            Tok::LParen => {
                let inner = self.parse_sum()?;
                self.expect(Tok::RParen, "closing `)`")?;
                Ok(inner)
            }
            Tok::Ident(ref name) => self.resolve_ident(&next, name),
            _ => Err(self.error(&next, "expected an expression")),
        }
    }

    fn resolve_ident(&mut self, at: &Spanned, name: &str) -> Result<Expression, ParseError> {
        if self.peek().tok == Tok::LParen {
            let func = Func::from_name(name)
                .ok_or_else(|| self.error(at, format!("unknown function `{name}`")))?;
            self.bump();
            let arg = self.parse_sum()?;
            self.expect(Tok::RParen, "closing `)` after function argument")?;
            return Ok(Expression::apply(func, arg));
        }
        if name == "t" {
            return Ok(Expression::time());
        }
        if let Some((is_multiplier, order, index)) = classify_jet_ident(name) {
            if is_multiplier {
                if order > 1 {
                    return Err(self.error(
                        at,
                        format!("multiplier derivative order {order} beyond 1 in `{name}`"),
                    ));
                }
                if index >= self.ctx.m {
                    return Err(self.error(
                        at,
                        format!(
                            "multiplier index {index} out of range (model has {} constraints)",
                            self.ctx.m
                        ),
                    ));
                }
                return Ok(Expression::multiplier(index, order as u8));
            }
            if order > 4 {
                return Err(self.error(
                    at,
                    format!("derivative order {order} beyond 4 in `{name}`"),
                ));
            }
            if index >= self.ctx.n {
                return Err(self.error(
                    at,
                    format!(
                        "coordinate index {index} out of range (model has n={})",
                        self.ctx.n
                    ),
                ));
            }
            return Ok(Expression::coord(index, order as u8));
        }
        if self.ctx.params.contains(name) {
            return Ok(Expression::parameter(name));
        }
        Err(self.error(at, format!("unknown identifier `{name}`")))
    }
}

/// Parses `text` against `ctx`. The free-symbol set of the result is
/// available through [`Expression::free_symbols`].
pub fn parse(text: &str, ctx: &ParseContext) -> Result<Expression, ParseError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0, ctx };
    let expr = parser.parse_sum()?;
    let trailing = parser.bump();
    if trailing.tok != Tok::Eof {
        return Err(parser.error(&trailing, "unexpected trailing input"));
    }
    Ok(expr)
}
