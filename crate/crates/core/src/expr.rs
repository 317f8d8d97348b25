//! A small closed expression language for Hamiltonians, sections, and
//! time-dependent coefficients: real literals, named parameters, coordinate
//! symbols, the operators `+ - * / ^`, and the functions
//! `sin cos tan exp ln sqrt abs`.
//!
//! The grammar is fixed so that every expression is totally differentiable
//! by dual arithmetic; there are no user-defined functions.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::numerics::{DualScalar, SingularityError};

/// A coordinate slot on extended phase space. `Q`/`P` indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoordId {
    Q(usize),
    P(usize),
    S,
}

impl fmt::Display for CoordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoordId::Q(i) => write!(f, "q{}", i + 1),
            CoordId::P(i) => write!(f, "p{}", i + 1),
            CoordId::S => write!(f, "s"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree. Parameters stay symbolic so printing round-trips and
/// bindings can be rebound without reparsing.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Coord(CoordId),
    Param(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn coord(c: CoordId) -> Self {
        Expr::Coord(c)
    }

    pub fn param(name: impl Into<String>) -> Self {
        Expr::Param(name.into())
    }

    pub fn call(f: Func, e: Expr) -> Self {
        Expr::Call(f, Box::new(e))
    }

    pub fn neg(e: Expr) -> Self {
        match e {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if (x + y).is_finite() => return Expr::Const(x + y),
            (Expr::Const(x), _) if *x == 0.0 => return b,
            (_, Expr::Const(y)) if *y == 0.0 => return a,
            _ => {}
        }
        Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if (x - y).is_finite() => return Expr::Const(x - y),
            (_, Expr::Const(y)) if *y == 0.0 => return a,
            _ => {}
        }
        if let Expr::Const(x) = a {
            if x == 0.0 {
                return Expr::neg(b);
            }
            return Expr::Bin(BinOp::Sub, Box::new(Expr::Const(x)), Box::new(b));
        }
        Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if (x * y).is_finite() => return Expr::Const(x * y),
            (Expr::Const(x), _) if *x == 0.0 => return Expr::Const(0.0),
            (_, Expr::Const(y)) if *y == 0.0 => return Expr::Const(0.0),
            (Expr::Const(x), _) if *x == 1.0 => return b,
            (_, Expr::Const(y)) if *y == 1.0 => return a,
            _ => {}
        }
        Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        if let (_, Expr::Const(y)) = (&a, &b) {
            if *y == 1.0 {
                return a;
            }
        }
        Expr::Bin(BinOp::Div, Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, b: Expr) -> Self {
        if let Expr::Const(y) = b {
            if y == 1.0 {
                return a;
            }
            if y == 0.0 {
                return Expr::Const(1.0);
            }
            return Expr::Bin(BinOp::Pow, Box::new(a), Box::new(Expr::Const(y)));
        }
        Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b))
    }

    pub fn powi_of(a: Expr, k: i32) -> Self {
        Expr::pow(a, Expr::Const(f64::from(k)))
    }

    /// Collect every coordinate and parameter symbol appearing in the tree.
    pub fn free_symbols(&self) -> (Vec<CoordId>, Vec<String>) {
        let mut coords = Vec::new();
        let mut params = Vec::new();
        self.walk_symbols(&mut coords, &mut params);
        coords.sort();
        coords.dedup();
        params.sort();
        params.dedup();
        (coords, params)
    }

    fn walk_symbols(&self, coords: &mut Vec<CoordId>, params: &mut Vec<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Coord(c) => coords.push(*c),
            Expr::Param(name) => params.push(name.clone()),
            Expr::Neg(e) | Expr::Call(_, e) => e.walk_symbols(coords, params),
            Expr::Bin(_, a, b) => {
                a.walk_symbols(coords, params);
                b.walk_symbols(coords, params);
            }
        }
    }
}

/// Which symbols are legal coordinates for a given expression role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolContext {
    /// `q1..qn`, `p1..pn`, `s`.
    Hamiltonian { n: usize },
    /// `q1..qn`, `s`; momenta are outputs here, not inputs.
    Section { n: usize },
    /// A single variable `t`, mapped onto the `s` slot.
    Time,
}

impl SymbolContext {
    fn resolve(self, name: &str) -> Option<CoordId> {
        fn indexed(rest: &str, n: usize) -> Option<usize> {
            let i: usize = rest.parse().ok()?;
            (i >= 1 && i <= n && rest == i.to_string()).then(|| i - 1)
        }
        match self {
            SymbolContext::Hamiltonian { n } => match name.split_at(name.len().min(1)) {
                ("q", rest) => indexed(rest, n).map(CoordId::Q),
                ("p", rest) => indexed(rest, n).map(CoordId::P),
                ("s", "") => Some(CoordId::S),
                _ => None,
            },
            SymbolContext::Section { n } => match name.split_at(name.len().min(1)) {
                ("q", rest) => indexed(rest, n).map(CoordId::Q),
                ("s", "") => Some(CoordId::S),
                _ => None,
            },
            SymbolContext::Time => (name == "t").then_some(CoordId::S),
        }
    }

    /// Is the coordinate legal in this context (for AST-built expressions)?
    pub fn allows(self, c: CoordId) -> bool {
        match (self, c) {
            (SymbolContext::Hamiltonian { n }, CoordId::Q(i) | CoordId::P(i)) => i < n,
            (SymbolContext::Hamiltonian { .. }, CoordId::S) => true,
            (SymbolContext::Section { n }, CoordId::Q(i)) => i < n,
            (SymbolContext::Section { .. }, CoordId::S) => true,
            (SymbolContext::Section { .. }, CoordId::P(_)) => false,
            (SymbolContext::Time, c) => c == CoordId::S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown symbol `{name}` at position {position}")]
    UnknownSymbol { name: String, position: usize },
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
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
            }
            '+' | '-' | '*' | '/' | '^' | '(' | ')' => {
                let tok = match c {
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '^' => Tok::Caret,
                    '(' => Tok::LParen,
                    _ => Tok::RParen,
                };
                out.push(Token { tok, pos });
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let span = &text[start..i];
                let v: f64 = span.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    message: format!("invalid number `{span}`"),
                })?;
                out.push(Token {
                    tok: Tok::Num(v),
                    pos: start,
                });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(text[start..i].to_string()),
                    pos: start,
                });
            }
            _ => {
                return Err(ParseError::Syntax {
                    position: pos,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    i: usize,
    end: usize,
    ctx: SymbolContext,
    params: &'a BTreeMap<String, f64>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.i)
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.i).cloned();
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Plus) => {
                    self.advance();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.advance();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Star) => {
                    self.advance();
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.advance();
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Minus)) {
            self.advance();
            let inner = self.unary()?;
            // Fold a literal sign so `-1.5` is a single constant.
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Caret)) {
            self.advance();
            // Right-associative; the exponent may carry a unary sign.
            let exponent = self.unary_power()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    // Exponent position: allows `-` and chains `^` right-associatively.
    fn unary_power(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Minus)) {
            self.advance();
            let inner = self.unary_power()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.advance().map(|t| t.tok) {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                let close_pos = self.pos();
                match self.advance().map(|t| t.tok) {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(ParseError::Syntax {
                        position: close_pos,
                        message: "expected `)`".to_string(),
                    }),
                }
            }
            Some(Tok::Ident(name)) => {
                if matches!(self.peek().map(|t| &t.tok), Some(Tok::LParen)) {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownSymbol {
                        name: name.clone(),
                        position: pos,
                    })?;
                    self.advance(); // consume `(`
                    let arg = self.expr()?;
                    let close_pos = self.pos();
                    match self.advance().map(|t| t.tok) {
                        Some(Tok::RParen) => Ok(Expr::Call(func, Box::new(arg))),
                        _ => Err(ParseError::Syntax {
                            position: close_pos,
                            message: "expected `)`".to_string(),
                        }),
                    }
                } else if let Some(c) = self.ctx.resolve(&name) {
                    Ok(Expr::Coord(c))
                } else if self.params.contains_key(&name) {
                    Ok(Expr::Param(name))
                } else {
                    Err(ParseError::UnknownSymbol {
                        name,
                        position: pos,
                    })
                }
            }
            _ => Err(ParseError::Syntax {
                position: pos,
                message: "expected an operand".to_string(),
            }),
        }
    }

}

/// Parse `text` in the given symbol context. Free symbols must be
/// coordinates of the context or keys of `params`.
pub fn parse(
    text: &str,
    ctx: SymbolContext,
    params: &BTreeMap<String, f64>,
) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        i: 0,
        end: text.len(),
        ctx,
        params,
    };
    let e = parser.expr()?;
    if let Some(t) = parser.peek() {
        return Err(ParseError::Syntax {
            position: t.pos,
            message: "unexpected trailing input".to_string(),
        });
    }
    Ok(e)
}

// Printing precedence levels; atoms sit above everything.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Const(c) if *c < 0.0 => 3,
        Expr::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn fmt_prec(e: &Expr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let needs_parens = prec(e) < min;
    if needs_parens {
        write!(f, "(")?;
    }
    match e {
        Expr::Const(c) => write!(f, "{c}")?,
        Expr::Coord(c) => write!(f, "{c}")?,
        Expr::Param(name) => write!(f, "{name}")?,
        Expr::Neg(inner) => {
            write!(f, "-")?;
            fmt_prec(inner, 4, f)?;
        }
        Expr::Bin(op, a, b) => {
            let (sym, p) = match op {
                BinOp::Add => ("+", 1),
                BinOp::Sub => ("-", 1),
                BinOp::Mul => ("*", 2),
                BinOp::Div => ("/", 2),
                BinOp::Pow => ("^", 4),
            };
            if *op == BinOp::Pow {
                // Right-associative: parenthesize the base, not the tail.
                fmt_prec(a, p + 1, f)?;
                write!(f, "{sym}")?;
                fmt_prec(b, p, f)?;
            } else {
                fmt_prec(a, p, f)?;
                write!(f, "{sym}")?;
                fmt_prec(b, p + 1, f)?;
            }
        }
        Expr::Call(func, arg) => {
            write!(f, "{}(", func.name())?;
            fmt_prec(arg, 0, f)?;
            write!(f, ")")?;
        }
    }
    if needs_parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_prec(self, 0, f)
    }
}

/// How a flat slice of evaluation slots maps onto coordinate symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordLayout {
    /// `[q1..qn, p1..pn, s]`
    Extended { n: usize },
    /// `[q1..qn, s]`
    Base { n: usize },
    /// `[t]`
    Time,
}

impl CoordLayout {
    pub fn len(self) -> usize {
        match self {
            CoordLayout::Extended { n } => 2 * n + 1,
            CoordLayout::Base { n } => n + 1,
            CoordLayout::Time => 1,
        }
    }

    fn slot(self, c: CoordId) -> Option<usize> {
        match (self, c) {
            (CoordLayout::Extended { n }, CoordId::Q(i)) if i < n => Some(i),
            (CoordLayout::Extended { n }, CoordId::P(i)) if i < n => Some(n + i),
            (CoordLayout::Extended { n }, CoordId::S) => Some(2 * n),
            (CoordLayout::Base { n }, CoordId::Q(i)) if i < n => Some(i),
            (CoordLayout::Base { n }, CoordId::S) => Some(n),
            (CoordLayout::Time, CoordId::S) => Some(0),
            _ => None,
        }
    }
}

fn integer_exponent(e: &Expr) -> Option<i32> {
    if let Expr::Const(c) = e {
        if c.fract() == 0.0 && c.abs() <= f64::from(i32::MAX) {
            return Some(*c as i32);
        }
    }
    None
}

/// Evaluate with dual arithmetic. Domain violations (division by zero,
/// `ln` of a non-positive value, `sqrt` of a negative one, real powers of a
/// non-positive base) and non-finite intermediates raise
/// [`SingularityError`] rather than propagating NaN or infinity.
pub fn eval_dual(
    e: &Expr,
    layout: CoordLayout,
    coords: &[DualScalar],
    params: &BTreeMap<String, f64>,
) -> Result<DualScalar, SingularityError> {
    debug_assert_eq!(coords.len(), layout.len());
    let r = match e {
        Expr::Const(c) => DualScalar::constant(*c),
        Expr::Coord(c) => {
            let slot = layout
                .slot(*c)
                .ok_or_else(|| SingularityError::new(format!("coordinate {c} not in scope")))?;
            coords[slot]
        }
        Expr::Param(name) => {
            let v = params
                .get(name)
                .ok_or_else(|| SingularityError::new(format!("unbound parameter `{name}`")))?;
            DualScalar::constant(*v)
        }
        Expr::Neg(inner) => -eval_dual(inner, layout, coords, params)?,
        Expr::Bin(op, a, b) => {
            let lhs = eval_dual(a, layout, coords, params)?;
            match op {
                BinOp::Add => lhs + eval_dual(b, layout, coords, params)?,
                BinOp::Sub => lhs - eval_dual(b, layout, coords, params)?,
                BinOp::Mul => lhs * eval_dual(b, layout, coords, params)?,
                BinOp::Div => {
                    let rhs = eval_dual(b, layout, coords, params)?;
                    if rhs.value == 0.0 {
                        return Err(SingularityError::new("division by zero"));
                    }
                    lhs / rhs
                }
                BinOp::Pow => {
                    if let Some(k) = integer_exponent(b) {
                        if lhs.value == 0.0 && k < 0 {
                            return Err(SingularityError::new("zero raised to a negative power"));
                        }
                        lhs.powi(k)
                    } else {
                        let rhs = eval_dual(b, layout, coords, params)?;
                        if lhs.value <= 0.0 {
                            return Err(SingularityError::new(format!(
                                "real power of non-positive base {}",
                                lhs.value
                            )));
                        }
                        lhs.pow(rhs)
                    }
                }
            }
        }
        Expr::Call(func, arg) => {
            let x = eval_dual(arg, layout, coords, params)?;
            match func {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Ln => {
                    if x.value <= 0.0 {
                        return Err(SingularityError::new(format!(
                            "log of non-positive value {}",
                            x.value
                        )));
                    }
                    x.ln()
                }
                Func::Sqrt => {
                    if x.value < 0.0 {
                        return Err(SingularityError::new(format!(
                            "square root of negative value {}",
                            x.value
                        )));
                    }
                    x.sqrt()
                }
                Func::Abs => x.abs(),
            }
        }
    };
    if !r.value.is_finite() {
        return Err(SingularityError::new("non-finite result"));
    }
    Ok(r)
}

/// Mechanical derivative of the tree with respect to one coordinate.
/// Applies the textbook rules node by node; no simplification beyond the
/// constant folds in the smart constructors.
pub fn differentiate(e: &Expr, with: CoordId) -> Expr {
    match e {
        Expr::Const(_) | Expr::Param(_) => Expr::Const(0.0),
        Expr::Coord(c) => Expr::Const(if *c == with { 1.0 } else { 0.0 }),
        Expr::Neg(inner) => Expr::neg(differentiate(inner, with)),
        Expr::Bin(op, a, b) => {
            let da = differentiate(a, with);
            let db = differentiate(b, with);
            match op {
                BinOp::Add => Expr::add(da, db),
                BinOp::Sub => Expr::sub(da, db),
                BinOp::Mul => Expr::add(
                    Expr::mul(da, (**b).clone()),
                    Expr::mul((**a).clone(), db),
                ),
                BinOp::Div => Expr::div(
                    Expr::sub(
                        Expr::mul(da, (**b).clone()),
                        Expr::mul((**a).clone(), db),
                    ),
                    Expr::powi_of((**b).clone(), 2),
                ),
                BinOp::Pow => {
                    if let Some(k) = integer_exponent(b) {
                        Expr::mul(
                            Expr::mul(Expr::Const(f64::from(k)), Expr::powi_of((**a).clone(), k - 1)),
                            da,
                        )
                    } else {
                        // d(u^v) = u^v (v' ln u + v u' / u)
                        Expr::mul(
                            Expr::pow((**a).clone(), (**b).clone()),
                            Expr::add(
                                Expr::mul(db, Expr::call(Func::Ln, (**a).clone())),
                                Expr::div(Expr::mul((**b).clone(), da), (**a).clone()),
                            ),
                        )
                    }
                }
            }
        }
        Expr::Call(func, arg) => {
            let u = (**arg).clone();
            let du = differentiate(arg, with);
            match func {
                Func::Sin => Expr::mul(Expr::call(Func::Cos, u), du),
                Func::Cos => Expr::neg(Expr::mul(Expr::call(Func::Sin, u), du)),
                Func::Tan => Expr::div(du, Expr::powi_of(Expr::call(Func::Cos, u), 2)),
                Func::Exp => Expr::mul(Expr::call(Func::Exp, u), du),
                Func::Ln => Expr::div(du, u),
                Func::Sqrt => Expr::div(du, Expr::mul(Expr::Const(2.0), Expr::call(Func::Sqrt, u))),
                Func::Abs => Expr::mul(
                    du,
                    Expr::div(u.clone(), Expr::call(Func::Abs, u)),
                ),
            }
        }
    }
}
