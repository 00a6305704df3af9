//! The `expr-v1` expression language.
//!
//! Grammar (whitespace insignificant, no implicit multiplication):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | 'pi' | 'e' | 'x' | 'z'<k>
//!          | func '(' expr ')' | 'pow' '(' expr ',' expr ')' | '(' expr ')'
//! func    := exp | sin | cos | log | abs
//! ```
//!
//! Numbers are decimal with an optional exponent (`1.5e-3`). Variables are
//! `x` and `z1, z2, ...`; evaluation differentiates with respect to `x` only.

use std::fmt;

use thiserror::Error;

use crate::jet::{Jet, JetError};

pub const GRAMMAR_VERSION: &str = "expr-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    /// `z<k>`, k ≥ 1.
    Z(usize),
}

impl Var {
    /// Slot in a [`Bindings`] table: 0 for `x`, k for `z<k>`.
    pub fn slot(self) -> usize {
        match self {
            Var::X => 0,
            Var::Z(k) => k,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => write!(f, "x"),
            Var::Z(k) => write!(f, "z{k}"),
        }
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Log,
    Abs,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    Lexical,
    UnbalancedParen,
    UnknownIdentifier,
    WrongArity,
    UnexpectedToken,
    UnexpectedEnd,
}

/// Parse failure with a 0-based byte offset into the source.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at position {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, position: usize, message: impl Into<String>) -> Self {
        Self {
            kind,
            position,
            message: message.into(),
        }
    }

    /// 1-based (line, column) of the error within `source`.
    pub fn line_col(&self, source: &str) -> (usize, usize) {
        let upto = &source[..self.position.min(source.len())];
        let line = upto.matches('\n').count() + 1;
        let col = upto.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        (line, col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(Var),
    #[error(transparent)]
    Jet(#[from] JetError),
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
    Comma,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| {
                    ParseError::new(
                        ParseErrorKind::Lexical,
                        start,
                        format!("malformed number `{text}`"),
                    )
                })?;
                if !value.is_finite() {
                    return Err(ParseError::new(
                        ParseErrorKind::Lexical,
                        start,
                        format!("number `{text}` is not finite"),
                    ));
                }
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::new(
                    ParseErrorKind::Lexical,
                    i,
                    format!("unexpected character `{ch}`"),
                ));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(())
            }
            None => Err(ParseError::new(
                ParseErrorKind::UnbalancedParen,
                self.end,
                "missing `)`",
            )),
            Some(t) => Err(ParseError::new(
                ParseErrorKind::UnexpectedToken,
                self.offset(),
                format!("expected `)`, found {}", describe(t)),
            )),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Caret) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            None => Err(ParseError::new(
                ParseErrorKind::UnexpectedEnd,
                self.end,
                "unexpected end of input",
            )),
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect_close()?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => self.identifier(&name, at),
            Some(Tok::RParen) => Err(ParseError::new(
                ParseErrorKind::UnbalancedParen,
                at,
                "unmatched `)`",
            )),
            Some(t) => Err(ParseError::new(
                ParseErrorKind::UnexpectedToken,
                at,
                format!("unexpected {}", describe(&t)),
            )),
        }
    }

    fn identifier(&mut self, name: &str, at: usize) -> Result<Expr, ParseError> {
        match name {
            "x" => return Ok(Expr::Var(Var::X)),
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            "e" => return Ok(Expr::Num(std::f64::consts::E)),
            _ => {}
        }
        if let Some(idx) = name.strip_prefix('z') {
            if !idx.is_empty()
                && !idx.starts_with('0')
                && idx.bytes().all(|b| b.is_ascii_digit())
            {
                if let Ok(k) = idx.parse::<usize>() {
                    return Ok(Expr::Var(Var::Z(k)));
                }
            }
        }
        let Some(func) = Func::from_name(name) else {
            return Err(ParseError::new(
                ParseErrorKind::UnknownIdentifier,
                at,
                format!("unknown identifier `{name}`"),
            ));
        };
        match self.peek() {
            Some(Tok::LParen) => self.pos += 1,
            _ => {
                return Err(ParseError::new(
                    ParseErrorKind::UnexpectedToken,
                    self.offset(),
                    format!("expected `(` after `{name}`"),
                ))
            }
        }
        let mut args = vec![self.expr()?];
        while let Some(Tok::Comma) = self.peek() {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect_close()?;
        if args.len() != func.arity() {
            return Err(ParseError::new(
                ParseErrorKind::WrongArity,
                at,
                format!(
                    "`{name}` takes {} argument(s), got {}",
                    func.arity(),
                    args.len()
                ),
            ));
        }
        Ok(Expr::Call(func, args))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
    }
}

/// Parses an `expr-v1` source string.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let toks = lex(source)?;
    if toks.is_empty() {
        return Err(ParseError::new(ParseErrorKind::Empty, 0, "empty expression"));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: source.len(),
    };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(Tok::RParen) => Err(ParseError::new(
            ParseErrorKind::UnbalancedParen,
            p.offset(),
            "unmatched `)`",
        )),
        Some(t) => {
            let msg = format!("unexpected {}", describe(t));
            Err(ParseError::new(
                ParseErrorKind::UnexpectedToken,
                p.offset(),
                msg,
            ))
        }
    }
}

/// Variable values (or jets) indexed by [`Var::slot`].
#[derive(Debug, Clone)]
pub struct Bindings<T> {
    slots: Vec<Option<T>>,
}

impl<T: Copy> Bindings<T> {
    pub fn new() -> Self {
        Self { slots: Vec::new() }
    }

    pub fn with(mut self, var: Var, value: T) -> Self {
        self.set(var, value);
        self
    }

    pub fn set(&mut self, var: Var, value: T) {
        let s = var.slot();
        if self.slots.len() <= s {
            self.slots.resize(s + 1, None);
        }
        self.slots[s] = Some(value);
    }

    pub fn get(&self, var: Var) -> Option<T> {
        self.slots.get(var.slot()).copied().flatten()
    }
}

impl<T: Copy> Default for Bindings<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl Bindings<Jet> {
    /// Binds only `x`, as the identity jet at `x`.
    pub fn at_x(x: f64, order: usize) -> Self {
        Self::new().with(Var::X, Jet::variable(x, order))
    }
}

impl Expr {
    /// Variables referenced by the expression, sorted.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Jet of the expression. Bound jets are truncated to `order`; constants
    /// are placed at the point of the first bound variable (0 if none).
    pub fn eval_jet(&self, bindings: &Bindings<Jet>, order: usize) -> Result<Jet, EvalError> {
        let point = bindings
            .slots
            .iter()
            .flatten()
            .next()
            .map_or(0.0, |j| j.point());
        self.jet_at(bindings, order, point)
    }

    fn jet_at(&self, b: &Bindings<Jet>, order: usize, point: f64) -> Result<Jet, EvalError> {
        Ok(match self {
            Expr::Num(v) => Jet::constant(point, *v, order),
            Expr::Var(v) => {
                let j = b.get(*v).ok_or(EvalError::Unbound(*v))?;
                if j.order() < order {
                    return Err(JetError::Mismatch {
                        lhs_point: j.point(),
                        lhs_order: j.order(),
                        rhs_point: point,
                        rhs_order: order,
                    }
                    .into());
                }
                j.truncate(order)
            }
            Expr::Neg(e) => e.jet_at(b, order, point)?.neg(),
            Expr::Bin(op, l, r) => {
                let l = l.jet_at(b, order, point)?;
                let r = r.jet_at(b, order, point)?;
                match op {
                    BinOp::Add => l.add(&r)?,
                    BinOp::Sub => l.sub(&r)?,
                    BinOp::Mul => l.mul(&r)?,
                    BinOp::Div => l.div(&r)?,
                    BinOp::Pow => l.pow(&r)?,
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].jet_at(b, order, point)?;
                match f {
                    Func::Exp => a.exp()?,
                    Func::Sin => a.sin()?,
                    Func::Cos => a.cos()?,
                    Func::Log => a.ln()?,
                    Func::Abs => a.abs()?,
                    Func::Pow => a.pow(&args[1].jet_at(b, order, point)?)?,
                }
            }
        })
    }

    /// Plain recursive evaluation with the same domain rules as [`Expr::eval_jet`].
    pub fn eval(&self, b: &Bindings<f64>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => b.get(*v).ok_or(EvalError::Unbound(*v))?,
            Expr::Neg(e) => -e.eval(b)?,
            Expr::Bin(op, l, r) => {
                let l = l.eval(b)?;
                let r = r.eval(b)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(JetError::Singular(point_of(b)).into());
                        }
                        l / r
                    }
                    BinOp::Pow => scalar_pow(l, r, point_of(b))?,
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(b)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(JetError::Domain {
                                func: "log",
                                value: a,
                                point: point_of(b),
                            }
                            .into());
                        }
                        a.ln()
                    }
                    Func::Abs => a.abs(),
                    Func::Pow => scalar_pow(a, args[1].eval(b)?, point_of(b))?,
                }
            }
        })
    }

    /// Convenience: value of an expression in `x` alone.
    pub fn eval_x(&self, x: f64) -> Result<f64, EvalError> {
        self.eval(&Bindings::new().with(Var::X, x))
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            _ => 5,
        }
    }
}

fn point_of(b: &Bindings<f64>) -> f64 {
    b.get(Var::X).unwrap_or(0.0)
}

fn scalar_pow(base: f64, r: f64, point: f64) -> Result<f64, JetError> {
    let integer = r.fract() == 0.0 && r.abs() <= i32::MAX as f64;
    if !integer && base < 0.0 {
        return Err(JetError::Domain {
            func: "pow",
            value: base,
            point,
        });
    }
    if base == 0.0 && r < 0.0 {
        return Err(JetError::Singular(point));
    }
    if base == 0.0 && r == 0.0 {
        return Ok(1.0);
    }
    Ok(base.powf(r))
}

/// Postfix form of an [`Expr`] for repeated scalar evaluation without
/// allocation. Agrees with [`Expr::eval`] bit for bit, errors included.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Num(f64),
    X,
    Z(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

/// Stack depth served without touching the heap.
const INLINE_STACK: usize = 32;

impl Program {
    pub fn compile(e: &Expr) -> Self {
        let mut ops = Vec::new();
        let depth = Self::emit(e, &mut ops);
        Self { ops, depth }
    }

    fn emit(e: &Expr, ops: &mut Vec<Op>) -> usize {
        match e {
            Expr::Num(v) => {
                ops.push(Op::Num(*v));
                1
            }
            Expr::Var(Var::X) => {
                ops.push(Op::X);
                1
            }
            Expr::Var(Var::Z(k)) => {
                ops.push(Op::Z(*k));
                1
            }
            Expr::Neg(a) => {
                let d = Self::emit(a, ops);
                ops.push(Op::Neg);
                d
            }
            Expr::Bin(op, l, r) => {
                let dl = Self::emit(l, ops);
                let dr = Self::emit(r, ops);
                ops.push(Op::Bin(*op));
                dl.max(dr + 1)
            }
            Expr::Call(f, args) => {
                let mut depth = 0;
                for (i, a) in args.iter().enumerate() {
                    depth = depth.max(Self::emit(a, ops) + i);
                }
                ops.push(Op::Call(*f));
                depth
            }
        }
    }

    /// Value with `x` bound and `z<k>` bound to `z[k - 1]`.
    pub fn eval(&self, x: f64, z: &[f64]) -> Result<f64, EvalError> {
        if self.depth <= INLINE_STACK {
            self.run(x, z, &mut [0.0; INLINE_STACK])
        } else {
            self.run(x, z, &mut vec![0.0; self.depth])
        }
    }

    /// Jet with `x` bound to `x` and `z<k>` to `z[k - 1]`; same rules as
    /// [`Expr::eval_jet`] with `x` bound.
    pub fn eval_jet(&self, x: &Jet, z: &[Jet], order: usize) -> Result<Jet, EvalError> {
        let point = x.point();
        let bound = |j: &Jet| -> Result<Jet, EvalError> {
            if j.order() < order {
                return Err(JetError::Mismatch {
                    lhs_point: j.point(),
                    lhs_order: j.order(),
                    rhs_point: point,
                    rhs_order: order,
                }
                .into());
            }
            Ok(j.truncate(order))
        };
        let mut stack: Vec<Jet> = Vec::with_capacity(self.depth);
        for op in &self.ops {
            match *op {
                Op::Num(v) => stack.push(Jet::constant(point, v, order)),
                Op::X => stack.push(bound(x)?),
                Op::Z(k) => {
                    let j = k
                        .checked_sub(1)
                        .and_then(|i| z.get(i))
                        .ok_or(EvalError::Unbound(Var::Z(k)))?;
                    stack.push(bound(j)?);
                }
                Op::Neg => {
                    let a = stack.pop().expect("operand");
                    stack.push(a.neg());
                }
                Op::Bin(b) => {
                    let r = stack.pop().expect("operand");
                    let l = stack.pop().expect("operand");
                    stack.push(match b {
                        BinOp::Add => l.add(&r)?,
                        BinOp::Sub => l.sub(&r)?,
                        BinOp::Mul => l.mul(&r)?,
                        BinOp::Div => l.div(&r)?,
                        BinOp::Pow => l.pow(&r)?,
                    });
                }
                Op::Call(f) => {
                    let a = stack.pop().expect("operand");
                    let out = match f {
                        Func::Exp => a.exp()?,
                        Func::Sin => a.sin()?,
                        Func::Cos => a.cos()?,
                        Func::Log => a.ln()?,
                        Func::Abs => a.abs()?,
                        Func::Pow => stack.pop().expect("operand").pow(&a)?,
                    };
                    stack.push(out);
                }
            }
        }
        Ok(stack.pop().expect("result"))
    }

    fn run(&self, x: f64, z: &[f64], stack: &mut [f64]) -> Result<f64, EvalError> {
        let mut top = 0;
        for op in &self.ops {
            match *op {
                Op::Num(v) => {
                    stack[top] = v;
                    top += 1;
                }
                Op::X => {
                    stack[top] = x;
                    top += 1;
                }
                Op::Z(k) => {
                    stack[top] = *k
                        .checked_sub(1)
                        .and_then(|i| z.get(i))
                        .ok_or(EvalError::Unbound(Var::Z(k)))?;
                    top += 1;
                }
                Op::Neg => stack[top - 1] = -stack[top - 1],
                Op::Bin(b) => {
                    top -= 1;
                    let (l, r) = (stack[top - 1], stack[top]);
                    stack[top - 1] = match b {
                        BinOp::Add => l + r,
                        BinOp::Sub => l - r,
                        BinOp::Mul => l * r,
                        BinOp::Div => {
                            if r == 0.0 {
                                return Err(JetError::Singular(x).into());
                            }
                            l / r
                        }
                        BinOp::Pow => scalar_pow(l, r, x)?,
                    };
                }
                Op::Call(Func::Pow) => {
                    top -= 1;
                    stack[top - 1] = scalar_pow(stack[top - 1], stack[top], x)?;
                }
                Op::Call(f) => {
                    let a = stack[top - 1];
                    stack[top - 1] = match f {
                        Func::Exp => a.exp(),
                        Func::Sin => a.sin(),
                        Func::Cos => a.cos(),
                        Func::Log => {
                            if a <= 0.0 {
                                return Err(JetError::Domain {
                                    func: "log",
                                    value: a,
                                    point: x,
                                }
                                .into());
                            }
                            a.ln()
                        }
                        Func::Abs => a.abs(),
                        Func::Pow => unreachable!(),
                    };
                }
            }
        }
        Ok(stack[0])
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if self.prec() == 3 {
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                if e.prec() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Bin(op, l, r) => {
                let (p, sym, right_assoc) = match op {
                    BinOp::Add => (1, " + ", false),
                    BinOp::Sub => (1, " - ", false),
                    BinOp::Mul => (2, " * ", false),
                    BinOp::Div => (2, " / ", false),
                    BinOp::Pow => (4, "^", true),
                };
                let lp = l.prec() < p || (right_assoc && l.prec() == p);
                let rp = r.prec() < p || (!right_assoc && r.prec() == p);
                if lp {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                f.write_str(sym)?;
                if rp {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Formats a number for splicing into generated expression text.
pub fn literal(v: f64) -> String {
    if v < 0.0 {
        format!("({v})")
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(v: f64) -> Box<Expr> {
        Box::new(Expr::Num(v))
    }

    #[test]
    fn parses_exp_example() {
        let e = parse("exp(2*x) - 1").unwrap();
        let expected = Expr::Bin(
            BinOp::Sub,
            Box::new(Expr::Call(
                Func::Exp,
                vec![Expr::Bin(BinOp::Mul, num(2.0), Box::new(Expr::Var(Var::X)))],
            )),
            num(1.0),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn unterminated_call() {
        let err = parse("sin(").unwrap_err();
        assert_eq!(err.position, 4);
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
        assert_eq!(err.line_col("sin("), (1, 5));
    }

    #[test]
    fn z_variables() {
        let e = parse("pow(abs(z1), 0.5)").unwrap();
        assert_eq!(e.variables(), vec![Var::Z(1)]);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse("2^3^2").unwrap().eval_x(0.0).unwrap(), 512.0);
        assert_eq!(parse("-2^2").unwrap().eval_x(0.0).unwrap(), -4.0);
        assert_eq!(parse("1 - 2 - 3").unwrap().eval_x(0.0).unwrap(), -4.0);
        assert_eq!(parse("8 / 4 / 2").unwrap().eval_x(0.0).unwrap(), 1.0);
        assert_eq!(parse("2 * -3").unwrap().eval_x(0.0).unwrap(), -6.0);
        assert_eq!(parse("2^-1").unwrap().eval_x(0.0).unwrap(), 0.5);
        assert_eq!(parse("1.5e1 + .5").unwrap().eval_x(0.0).unwrap(), 15.5);
        assert_eq!(parse("2*e").unwrap().eval_x(0.0).unwrap(), 2.0 * std::f64::consts::E);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("2x").unwrap_err();
        assert_eq!((e.kind, e.position), (ParseErrorKind::UnexpectedToken, 1));
        let e = parse("(x + 1").unwrap_err();
        assert_eq!((e.kind, e.position), (ParseErrorKind::UnbalancedParen, 6));
        let e = parse("x + 1)").unwrap_err();
        assert_eq!((e.kind, e.position), (ParseErrorKind::UnbalancedParen, 5));
        let e = parse("foo(x)").unwrap_err();
        assert_eq!((e.kind, e.position), (ParseErrorKind::UnknownIdentifier, 0));
        let e = parse("1 + sin(x, 2)").unwrap_err();
        assert_eq!((e.kind, e.position), (ParseErrorKind::WrongArity, 4));
        let e = parse("pow(x)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::WrongArity);
        let e = parse("x # 2").unwrap_err();
        assert_eq!((e.kind, e.position), (ParseErrorKind::Lexical, 2));
        let e = parse("z0 + 1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier);
        assert_eq!(parse("   ").unwrap_err().kind, ParseErrorKind::Empty);
        assert_eq!(parse("sin + 1").unwrap_err().kind, ParseErrorKind::UnexpectedToken);
    }

    #[test]
    fn jet_examples() {
        let sq = parse("x^2").unwrap();
        let b = Bindings::new().with(Var::X, Jet::new(1.0, &[1.0, 1.0, 0.0]).unwrap());
        assert_eq!(sq.eval_jet(&b, 2).unwrap().derivs(), &[1.0, 2.0, 2.0]);

        let e = parse("exp(x)-1").unwrap();
        assert_eq!(
            e.eval_jet(&Bindings::at_x(0.0, 1), 1).unwrap().derivs(),
            &[0.0, 1.0]
        );

        let r = parse("abs(x)^0.5").unwrap();
        let err = r.eval_jet(&Bindings::at_x(0.0, 2), 2).unwrap_err();
        assert!(matches!(
            err,
            EvalError::Jet(JetError::NonDifferentiable { .. })
        ));
    }

    #[test]
    fn unbound_and_domain() {
        let e = parse("z2 + x").unwrap();
        assert_eq!(
            e.eval_jet(&Bindings::at_x(0.0, 1), 1).unwrap_err(),
            EvalError::Unbound(Var::Z(2))
        );
        let neg = parse("(x - 2)^0.5").unwrap();
        assert!(matches!(
            neg.eval_x(1.0),
            Err(EvalError::Jet(JetError::Domain { .. }))
        ));
        assert!(matches!(
            neg.eval_jet(&Bindings::at_x(1.0, 1), 1),
            Err(EvalError::Jet(JetError::Domain { .. }))
        ));
        // integer powers of negative bases stay real
        assert_eq!(parse("(x - 2)^3").unwrap().eval_x(1.0).unwrap(), -1.0);
    }

    #[test]
    fn printing_round_trips() {
        for src in [
            "exp(2*x) - 1",
            "-x^2",
            "(-x)^2",
            "x^-2",
            "2^3^2",
            "(2^3)^2",
            "a",
            "1 - (2 - 3)",
            "x / (2 * x)",
            "-(x + 1) * 3",
            "pow(abs(z1), 0.5) + sin(z3) * z2",
            "--x",
            "1e-12 * x + pi",
        ] {
            let Ok(first) = parse(src) else { continue };
            let printed = first.to_string();
            let second = parse(&printed).unwrap();
            assert_eq!(first, second, "{src} -> {printed}");
        }
        let neg_literal = Expr::Bin(BinOp::Pow, num(-2.0), num(2.0));
        assert_eq!(parse(&neg_literal.to_string()).unwrap().eval_x(0.0).unwrap(), 4.0);
    }

    #[test]
    fn program_matches_tree() {
        let z = [0.3, -1.7, 2.5];
        for src in [
            "exp(2*x) - 1",
            "-x^2 + z1*z2 - z3/x",
            "pow(abs(z1), 0.5) + sin(z3) * z2",
            "log(x) + cos(x)^3",
            "((((x + 1) * (x + 2)) * ((x + 3) * (x + 4))) / (x - 0.25))",
            "log(z2)",
            "1 / (x - x)",
            "z4",
            "(-2)^0.5",
        ] {
            let e = parse(src).unwrap();
            let prog = Program::compile(&e);
            for x in [-0.9, 0.25, 1.5] {
                let mut b = Bindings::new().with(Var::X, x);
                for (k, v) in z.iter().enumerate() {
                    b.set(Var::Z(k + 1), *v);
                }
                let tree = e.eval(&b);
                let flat = prog.eval(x, &z);
                match (tree, flat) {
                    (Ok(a), Ok(b)) => assert_eq!(a.to_bits(), b.to_bits(), "{src} at {x}"),
                    (a, b) => assert_eq!(a, b, "{src} at {x}"),
                }
                let zj: Vec<Jet> = z.iter().map(|v| Jet::dual(x, *v, 0.5)).collect();
                let mut bj = Bindings::new().with(Var::X, Jet::variable(x, 1));
                for (k, j) in zj.iter().enumerate() {
                    bj.set(Var::Z(k + 1), *j);
                }
                let tree = e.eval_jet(&bj, 1);
                let flat = prog.eval_jet(&Jet::variable(x, 1), &zj, 1);
                match (tree, flat) {
                    (Ok(a), Ok(b)) => assert_eq!(a, b, "{src} at {x}"),
                    (a, b) => assert_eq!(a, b, "{src} at {x}"),
                }
            }
        }
    }

    #[test]
    fn deep_program_spills_to_heap() {
        let src = (0..40).fold("x".to_string(), |acc, _| format!("1 + ({acc})*x"));
        let src = (0..40).fold(src, |acc, i| format!("({i} + {acc})"));
        let e = parse(&src).unwrap();
        let v = Program::compile(&e).eval(0.5, &[]).unwrap();
        assert_eq!(v, e.eval_x(0.5).unwrap());
    }
}
