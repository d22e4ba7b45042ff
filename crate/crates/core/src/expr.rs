//! Scalar coefficient expressions.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum   := prod (('+' | '-') prod)*
//! prod  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' '-'? digits)?
//! atom  := number | name | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! `x`, `t` and `s` are variables, `exp log sin cos sqrt` are functions, and
//! any other name is a constant bound at evaluation time. A minus sign written
//! directly in front of a number literal (and not followed by `^`) is read as a
//! negative literal, so printing and re-parsing preserve the tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub type Bindings = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {offset}: expected {}", expected.join(" | "))]
    Parse { offset: usize, expected: Vec<String> },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unbound constant `{0}`")]
    UnboundConstant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    T,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Const(String),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::T => "t",
            Var::S => "s",
        }
    }
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, a: f64) -> Result<f64, ExprError> {
        match self {
            Func::Exp => Ok(a.exp()),
            Func::Log if a <= 0.0 => Err(ExprError::Domain(format!("log of nonpositive value {a}"))),
            Func::Log => Ok(a.ln()),
            Func::Sin => Ok(a.sin()),
            Func::Cos => Ok(a.cos()),
            Func::Sqrt if a < 0.0 => Err(ExprError::Domain(format!("sqrt of negative value {a}"))),
            Func::Sqrt => Ok(a.sqrt()),
        }
    }
}

impl BinOp {
    fn apply(self, a: f64, b: f64) -> Result<f64, ExprError> {
        match self {
            BinOp::Add => Ok(a + b),
            BinOp::Sub => Ok(a - b),
            BinOp::Mul => Ok(a * b),
            BinOp::Div if b == 0.0 => Err(ExprError::Domain("division by zero".into())),
            BinOp::Div => Ok(a / b),
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => " + ",
            BinOp::Sub => " - ",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => PREC_SUM,
            BinOp::Mul | BinOp::Div => PREC_PROD,
        }
    }
}

fn powi(a: f64, n: i32) -> Result<f64, ExprError> {
    if n < 0 && a == 0.0 {
        return Err(ExprError::Domain("negative power of zero".into()));
    }
    Ok(a.powi(n))
}

fn finite(v: f64) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain(format!("non-finite result {v}")))
    }
}

// Constructors used by the symbolic layers.
impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Self {
        Expr::Var(v)
    }

    pub fn constant(name: impl Into<String>) -> Self {
        Expr::Const(name.into())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Self {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Self::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Self::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Self::bin(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Self::bin(BinOp::Div, a, b)
    }

    pub fn neg(a: Expr) -> Self {
        Expr::Neg(Box::new(a))
    }

    pub fn pow(a: Expr, n: i32) -> Self {
        Expr::Pow(Box::new(a), n)
    }

    pub fn call(f: Func, a: Expr) -> Self {
        Expr::Call(f, Box::new(a))
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        Parser::new(source).parse_all()
    }

    /// Names of all constants referenced by the tree.
    pub fn constants(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Const(name) = e {
                out.insert(name.clone());
            }
        });
        out
    }

    pub fn depends_on(&self, v: Var) -> bool {
        let mut hit = false;
        self.visit(&mut |e| hit |= *e == Expr::Var(v));
        hit
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Const(_) => {}
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Tree-walking evaluation; variable `s` defaults to 0.
    pub fn eval(&self, x: f64, t: f64, bindings: &Bindings) -> Result<f64, ExprError> {
        self.eval3(x, t, 0.0, bindings)
    }

    pub fn eval3(&self, x: f64, t: f64, s: f64, bindings: &Bindings) -> Result<f64, ExprError> {
        let v = self.eval_inner(&[x, t, s], bindings)?;
        finite(v)
    }

    fn eval_inner(&self, vars: &[f64; 3], b: &Bindings) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => vars[*v as usize],
            Expr::Const(name) => *b
                .get(name)
                .ok_or_else(|| ExprError::UnboundConstant(name.clone()))?,
            Expr::Neg(a) => -a.eval_inner(vars, b)?,
            Expr::Call(f, a) => f.apply(a.eval_inner(vars, b)?)?,
            Expr::Bin(op, l, r) => op.apply(l.eval_inner(vars, b)?, r.eval_inner(vars, b)?)?,
            Expr::Pow(a, n) => powi(a.eval_inner(vars, b)?, *n)?,
        })
    }

    /// Exact symbolic derivative, followed by constant folding.
    pub fn diff(&self, v: Var) -> Expr {
        self.diff_raw(v).simplify()
    }

    fn diff_raw(&self, v: Var) -> Expr {
        match self {
            Expr::Num(_) | Expr::Const(_) => Expr::Num(0.0),
            Expr::Var(w) => Expr::Num(if *w == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.diff_raw(v)),
            Expr::Bin(op, a, b) => {
                let (da, db) = (a.diff_raw(v), b.diff_raw(v));
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinOp::Add => Expr::add(da, db),
                    BinOp::Sub => Expr::sub(da, db),
                    BinOp::Mul => Expr::add(Expr::mul(da, b), Expr::mul(a, db)),
                    BinOp::Div => Expr::div(
                        Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a, db)),
                        Expr::pow(b, 2),
                    ),
                }
            }
            Expr::Pow(a, n) => {
                if *n == 0 {
                    return Expr::Num(0.0);
                }
                Expr::mul(
                    Expr::mul(Expr::Num(*n as f64), Expr::pow((**a).clone(), n - 1)),
                    a.diff_raw(v),
                )
            }
            Expr::Call(f, a) => {
                let da = a.diff_raw(v);
                let a = (**a).clone();
                match f {
                    Func::Exp => Expr::mul(Expr::call(Func::Exp, a), da),
                    Func::Log => Expr::div(da, a),
                    Func::Sin => Expr::mul(Expr::call(Func::Cos, a), da),
                    Func::Cos => Expr::mul(Expr::neg(Expr::call(Func::Sin, a)), da),
                    Func::Sqrt => Expr::div(da, Expr::mul(Expr::Num(2.0), Expr::call(Func::Sqrt, a))),
                }
            }
        }
    }

    /// Constant folding plus the unit and zero laws of `+`, `-`, `*`, `/`, `^`.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Const(_) => self.clone(),
            Expr::Neg(a) => match a.simplify() {
                Expr::Num(c) => Expr::Num(-c),
                Expr::Neg(inner) => *inner,
                a => Expr::neg(a),
            },
            Expr::Call(f, a) => {
                let a = a.simplify();
                if let Expr::Num(c) = a {
                    if let Ok(v) = f.apply(c) {
                        if v.is_finite() {
                            return Expr::Num(v);
                        }
                    }
                }
                Expr::call(*f, a)
            }
            Expr::Pow(a, n) => {
                let a = a.simplify();
                match (*n, &a) {
                    (0, _) if a.is_total() => Expr::Num(1.0),
                    (1, _) => a,
                    (_, Expr::Num(c)) => match powi(*c, *n) {
                        Ok(v) if v.is_finite() => Expr::Num(v),
                        _ => Expr::pow(a, *n),
                    },
                    _ => Expr::pow(a, *n),
                }
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                if let (Expr::Num(x), Expr::Num(y)) = (&a, &b) {
                    if let Ok(v) = op.apply(*x, *y) {
                        if v.is_finite() {
                            return Expr::Num(v);
                        }
                    }
                }
                let is = |e: &Expr, c: f64| matches!(e, Expr::Num(v) if *v == c);
                match op {
                    BinOp::Add if is(&a, 0.0) => b,
                    BinOp::Add | BinOp::Sub if is(&b, 0.0) => a,
                    BinOp::Sub if is(&a, 0.0) => Expr::neg(b).simplify(),
                    BinOp::Mul if (is(&a, 0.0) && b.is_total()) || (is(&b, 0.0) && a.is_total()) => Expr::Num(0.0),
                    BinOp::Mul if is(&a, 1.0) => b,
                    BinOp::Mul | BinOp::Div if is(&b, 1.0) => a,
                    _ => Expr::bin(*op, a, b),
                }
            }
        }
    }

    /// Whether evaluation can never raise a domain error, so the expression
    /// may be dropped by `u^0 = 1` and `0 * u = 0`. Constants stand for
    /// arbitrary finite reals.
    fn is_total(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Const(_) => true,
            Expr::Neg(a) => a.is_total(),
            Expr::Call(f, a) => matches!(f, Func::Sin | Func::Cos | Func::Exp) && a.is_total(),
            Expr::Pow(a, n) => *n >= 0 && a.is_total(),
            Expr::Bin(op, a, b) => *op != BinOp::Div && a.is_total() && b.is_total(),
        }
    }

    /// Replaces bound constants with their values.
    pub fn bind(&self, bindings: &Bindings) -> Expr {
        match self {
            Expr::Const(name) => bindings.get(name).map_or_else(|| self.clone(), |&v| Expr::Num(v)),
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::neg(a.bind(bindings)),
            Expr::Call(f, a) => Expr::call(*f, a.bind(bindings)),
            Expr::Pow(a, n) => Expr::pow(a.bind(bindings), *n),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.bind(bindings), b.bind(bindings)),
        }
    }

    /// Lowers to a flat stack program with constants resolved.
    pub fn compile(&self, bindings: &Bindings) -> Result<Compiled, ExprError> {
        let mut ops = Vec::new();
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        self.emit(bindings, &mut ops, &mut depth, &mut max_depth)?;
        Ok(Compiled { ops, max_depth })
    }

    fn emit(
        &self,
        b: &Bindings,
        ops: &mut Vec<Op>,
        depth: &mut usize,
        max_depth: &mut usize,
    ) -> Result<(), ExprError> {
        let mut push = |ops: &mut Vec<Op>, op: Op, depth: &mut usize| {
            ops.push(op);
            *depth += 1;
            *max_depth = (*max_depth).max(*depth);
        };
        match self {
            Expr::Num(v) => push(ops, Op::Push(*v), depth),
            Expr::Var(v) => push(ops, Op::Load(*v as u8), depth),
            Expr::Const(name) => {
                let v = *b
                    .get(name)
                    .ok_or_else(|| ExprError::UnboundConstant(name.clone()))?;
                push(ops, Op::Push(v), depth)
            }
            Expr::Neg(a) => {
                a.emit(b, ops, depth, max_depth)?;
                ops.push(Op::Neg);
            }
            Expr::Call(f, a) => {
                a.emit(b, ops, depth, max_depth)?;
                ops.push(Op::Call(*f));
            }
            Expr::Pow(a, n) => {
                a.emit(b, ops, depth, max_depth)?;
                ops.push(Op::Pow(*n));
            }
            Expr::Bin(op, l, r) => {
                l.emit(b, ops, depth, max_depth)?;
                r.emit(b, ops, depth, max_depth)?;
                ops.push(Op::Bin(*op));
                *depth -= 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Push(f64),
    Load(u8),
    Neg,
    Call(Func),
    Bin(BinOp),
    Pow(i32),
}

/// Stack-machine form of an [`Expr`] for hot loops. Evaluation follows the
/// same operation order as [`Expr::eval`], so results are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    ops: Vec<Op>,
    max_depth: usize,
}

const INLINE_STACK: usize = 32;

impl Compiled {
    pub fn eval(&self, x: f64, t: f64) -> Result<f64, ExprError> {
        self.eval3(x, t, 0.0)
    }

    pub fn eval3(&self, x: f64, t: f64, s: f64) -> Result<f64, ExprError> {
        let vars = [x, t, s];
        if self.max_depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.run(&vars, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.max_depth];
            self.run(&vars, &mut stack)
        }
    }

    fn run(&self, vars: &[f64; 3], stack: &mut [f64]) -> Result<f64, ExprError> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Push(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Load(i) => {
                    stack[sp] = vars[i as usize];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1])?,
                Op::Pow(n) => stack[sp - 1] = powi(stack[sp - 1], n)?,
                Op::Bin(b) => {
                    sp -= 1;
                    stack[sp - 1] = b.apply(stack[sp - 1], stack[sp])?;
                }
            }
        }
        finite(stack[0])
    }
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

// Printing.

const PREC_SUM: u8 = 1;
const PREC_PROD: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(v) if v.is_sign_negative() => PREC_UNARY,
            Expr::Num(_) | Expr::Var(_) | Expr::Const(_) | Expr::Call(..) => PREC_ATOM,
            Expr::Neg(_) => PREC_UNARY,
            Expr::Pow(..) => PREC_POW,
            Expr::Bin(op, ..) => op.precedence(),
        }
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Const(name) => f.write_str(name),
            Expr::Neg(a) => {
                f.write_str("-")?;
                let wrap = matches!(**a, Expr::Bin(..) | Expr::Num(_) | Expr::Neg(_));
                write_wrapped(f, a, wrap)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Pow(a, n) => {
                write_wrapped(f, a, a.precedence() < PREC_ATOM)?;
                write!(f, "^{n}")
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                write_wrapped(f, a, a.precedence() < p)?;
                f.write_str(op.symbol())?;
                write_wrapped(f, b, b.precedence() <= p)
            }
        }
    }
}

// Parsing.

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn error<T>(&self, expected: &[&str]) -> Result<T, ExprError> {
        Err(ExprError::Parse {
            offset: self.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn parse_all(mut self) -> Result<Expr, ExprError> {
        if self.peek().is_none() {
            return self.error(&["expression"]);
        }
        let e = self.sum()?;
        if self.peek().is_some() {
            return self.error(&["operator", "end of input"]);
        }
        Ok(e)
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.prod()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::bin(op, lhs, self.prod()?);
        }
    }

    fn prod(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() != Some(b'-') {
            return self.power();
        }
        self.pos += 1;
        let start = self.pos;
        if matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') && self.pos == start {
            let v = self.number()?;
            if self.peek() != Some(b'^') {
                return Ok(Expr::Num(-v));
            }
            self.pos = start;
        }
        Ok(Expr::neg(self.unary()?))
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == digits_start {
            self.pos = start;
            return self.error(&["integer exponent"]);
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match text.parse::<i32>() {
            Ok(n) => Ok(Expr::pow(base, n)),
            Err(_) => {
                self.pos = start;
                self.error(&["integer exponent"])
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Num(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                if let Some(func) = Func::from_name(name) {
                    if self.peek() != Some(b'(') {
                        return self.error(&["("]);
                    }
                    self.pos += 1;
                    let arg = self.sum()?;
                    if self.peek() != Some(b')') {
                        return self.error(&[")"]);
                    }
                    self.pos += 1;
                    return Ok(Expr::call(func, arg));
                }
                Ok(match name {
                    "x" => Expr::Var(Var::X),
                    "t" => Expr::Var(Var::T),
                    "s" => Expr::Var(Var::S),
                    _ => Expr::Const(name.to_string()),
                })
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                if self.peek() != Some(b')') {
                    return self.error(&[")"]);
                }
                self.pos += 1;
                Ok(e)
            }
            _ => self.error(&["number", "name", "("]),
        }
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src;
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            let exp_digits = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > exp_digits {
                i = j;
            }
        }
        let text = std::str::from_utf8(&bytes[start..i]).expect("ascii");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos = i;
                Ok(v)
            }
            _ => self.error(&["number"]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    fn none() -> Bindings {
        Bindings::new()
    }

    #[test]
    fn parses_constant_times_variable() {
        assert_eq!(p("b*x"), Expr::mul(Expr::constant("b"), Expr::var(Var::X)));
    }

    #[test]
    fn parses_power_plus_call() {
        assert_eq!(
            p("x^2 + sin(t)"),
            Expr::add(Expr::pow(Expr::var(Var::X), 2), Expr::call(Func::Sin, Expr::var(Var::T)))
        );
    }

    #[test]
    fn truncated_input_reports_offset() {
        match Expr::parse("x +") {
            Err(ExprError::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let e = p("a - b - c");
        assert_eq!(
            e,
            Expr::sub(Expr::sub(Expr::constant("a"), Expr::constant("b")), Expr::constant("c"))
        );
        assert_eq!(p("-x^2"), Expr::neg(Expr::pow(Expr::var(Var::X), 2)));
        assert_eq!(p("-2^2"), Expr::neg(Expr::pow(Expr::num(2.0), 2)));
        assert_eq!(p("-2*x"), Expr::mul(Expr::num(-2.0), Expr::var(Var::X)));
        assert_eq!(p("8/4/2").eval(0.0, 0.0, &none()).unwrap(), 1.0);
    }

    #[test]
    fn eval_examples() {
        assert_eq!(p("x^2").eval(3.0, 0.0, &none()).unwrap(), 9.0);
        assert_eq!(p("exp(0)").eval(0.0, 0.0, &none()).unwrap(), 1.0);
        assert!(matches!(p("1/x").eval(0.0, 0.0, &none()), Err(ExprError::Domain(_))));
        assert!(matches!(p("log(x)").eval(-1.0, 0.0, &none()), Err(ExprError::Domain(_))));
        assert!(matches!(p("sqrt(x)").eval(-1.0, 0.0, &none()), Err(ExprError::Domain(_))));
        assert!(matches!(
            p("k*x").eval(1.0, 0.0, &none()),
            Err(ExprError::UnboundConstant(name)) if name == "k"
        ));
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(p("b*x").diff(Var::X), p("b"));
        assert_eq!(p("sin(x)").diff(Var::X), p("cos(x)"));
        let d = p("x^3").diff(Var::X);
        let f = p("x^3");
        let h = 1e-5;
        let fd = (f.eval(2.0 + h, 0.0, &none()).unwrap() - f.eval(2.0 - h, 0.0, &none()).unwrap()) / (2.0 * h);
        let exact = d.eval(2.0, 0.0, &none()).unwrap();
        assert_eq!(exact, 12.0);
        assert!((fd - exact).abs() < 1e-6);
    }

    #[test]
    fn printer_round_trips_normalized_source() {
        for src in [
            "x^2 + sin(t)",
            "b*x",
            "-x^2",
            "x*-2",
            "x - -2",
            "(-2)^2",
            "-(2)",
            "a - (b - c)",
            "a/(b*c)",
            "(a + b)^-3",
            "exp(-x)*cos(t)",
            "-(a + b)",
            "0.5*b^2*x",
        ] {
            let e = p(src);
            assert_eq!(e.to_string(), src, "printing {src}");
            assert_eq!(p(&e.to_string()), e);
        }
    }

    #[test]
    fn compiled_matches_tree_walk() {
        let mut b = Bindings::new();
        b.insert("k".into(), 0.7);
        let e = p("k*sin(x)^2 - exp(-t)/(1 + x^2) + sqrt(x*x + 1)");
        let c = e.compile(&b).unwrap();
        for &(x, t) in &[(0.0, 0.0), (1.5, -0.3), (-2.0, 4.0)] {
            assert_eq!(c.eval(x, t).unwrap().to_bits(), e.eval(x, t, &b).unwrap().to_bits());
        }
    }

    #[test]
    fn simplifier_folds_constants() {
        assert_eq!(p("2*3 + x*1 + 0").simplify(), p("6 + x"));
        assert_eq!(p("0*x + 1*y").simplify(), p("y"));
        assert_eq!(p("-(-x)").simplify(), p("x"));
    }

    #[test]
    fn simplifier_keeps_domain_errors() {
        let b = Bindings::new();
        for src in ["sin(1/x)^0", "0*log(x)", "sqrt(x)*0"] {
            let e = p(src);
            assert!(e.eval(0.0, 0.0, &b).is_err() || e.eval(-1.0, 0.0, &b).is_err(), "{src}");
            assert_eq!(e.simplify(), e, "{src}");
        }
        assert_eq!(p("cos(x)^0").simplify(), Expr::Num(1.0));
    }
}
