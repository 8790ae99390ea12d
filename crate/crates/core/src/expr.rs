//! Scalar expression language over states `x1..xn` and controls `u1..um`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `-x^2` parses as `-(x^2)` and `^` is right associative. Literals are
//! always nonnegative; a leading minus is a `Neg` node, which keeps
//! parse/print round trips exact.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{EvalError, ParseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    X(usize),
    U(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func1 {
    Sin,
    Cos,
    Tan,
    Atan,
    Sqrt,
    Abs,
    Exp,
    Log,
    Sign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func2 {
    Atan2,
    Min,
    Max,
}

impl Func1 {
    pub const ALL: [Func1; 9] = [
        Func1::Sin,
        Func1::Cos,
        Func1::Tan,
        Func1::Atan,
        Func1::Sqrt,
        Func1::Abs,
        Func1::Exp,
        Func1::Log,
        Func1::Sign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func1::Sin => "sin",
            Func1::Cos => "cos",
            Func1::Tan => "tan",
            Func1::Atan => "atan",
            Func1::Sqrt => "sqrt",
            Func1::Abs => "abs",
            Func1::Exp => "exp",
            Func1::Log => "log",
            Func1::Sign => "sign",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl Func2 {
    pub const ALL: [Func2; 3] = [Func2::Atan2, Func2::Min, Func2::Max];

    pub fn name(self) -> &'static str {
        match self {
            Func2::Atan2 => "atan2",
            Func2::Min => "min",
            Func2::Max => "max",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Expression tree. Constants are finite and nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Const(f64),
    Var(Var),
    Neg(Box<ScalarExpr>),
    Bin(BinOp, Box<ScalarExpr>, Box<ScalarExpr>),
    Call1(Func1, Box<ScalarExpr>),
    Call2(Func2, Box<ScalarExpr>, Box<ScalarExpr>),
}

/// Identifiers resolved to numbers at parse time.
pub type Constants = BTreeMap<String, f64>;

/// Parse `text` with variables `x1..xn`, `u1..um` and the constant `pi`.
pub fn parse_expr(text: &str, n: usize, m: usize) -> Result<ScalarExpr, ParseError> {
    parse_expr_with(text, n, m, &Constants::new())
}

/// Like [`parse_expr`], with extra named constants. Negative values are
/// inserted as `Neg(Const(|v|))`.
pub fn parse_expr_with(
    text: &str,
    n: usize,
    m: usize,
    constants: &Constants,
) -> Result<ScalarExpr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        n,
        m,
        constants,
        src_len: text.len(),
    };
    let e = p.expr()?;
    if let Some(t) = p.tokens.get(p.pos) {
        return Err(ParseError::Syntax {
            pos: t.pos,
            msg: format!("unexpected {}", t.kind),
        });
    }
    Ok(e)
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier '{s}'"),
            Tok::Op(c) => write!(f, "'{c}'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
        }
    }
}

struct Token {
    kind: Tok,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            let s = &text[start..i];
            let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                pos: start,
                msg: format!("malformed number '{s}'"),
            })?;
            out.push(Token {
                kind: Tok::Num(v),
                pos: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: Tok::Ident(text[start..i].to_string()),
                pos: start,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                return Err(ParseError::Syntax {
                    pos: start,
                    msg: format!("unexpected character '{c}'"),
                })
            }
        };
        out.push(Token { kind, pos: start });
        i += c.len_utf8();
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    n: usize,
    m: usize,
    constants: &'a Constants,
    src_len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.src_len, |t| t.pos)
    }

    fn eat_op(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ParseError::Syntax {
                pos: self.here(),
                msg: format!("expected {want}, found {t}"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.here(),
                msg: format!("expected {want}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_op('+') {
                BinOp::Add
            } else if self.eat_op('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = ScalarExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_op('*') {
                BinOp::Mul
            } else if self.eat_op('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = ScalarExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<ScalarExpr, ParseError> {
        if self.eat_op('-') {
            return Ok(ScalarExpr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ScalarExpr, ParseError> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let exp = self.unary()?;
            return Ok(ScalarExpr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ScalarExpr, ParseError> {
        let pos = self.here();
        let Some(tok) = self.tokens.get(self.pos).map(|t| t.kind.clone()) else {
            return Err(ParseError::Syntax {
                pos,
                msg: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(ScalarExpr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    return self.call(&name, pos);
                }
                self.ident(&name, pos)
            }
            other => Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected {other}"),
            }),
        }
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<ScalarExpr, ParseError> {
        let mut args = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen)?;
        let arity = |want: usize| {
            if args.len() == want {
                Ok(())
            } else {
                Err(ParseError::Syntax {
                    pos,
                    msg: format!("{name} takes {want} argument(s), got {}", args.len()),
                })
            }
        };
        if let Some(f) = Func1::from_name(name) {
            arity(1)?;
            let a = args.pop().unwrap();
            return Ok(ScalarExpr::Call1(f, Box::new(a)));
        }
        if let Some(f) = Func2::from_name(name) {
            arity(2)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            return Ok(ScalarExpr::Call2(f, Box::new(a), Box::new(b)));
        }
        Err(ParseError::UnknownIdentifier {
            pos,
            name: name.to_string(),
        })
    }

    fn ident(&self, name: &str, pos: usize) -> Result<ScalarExpr, ParseError> {
        let var = |prefix: char, bound: usize| -> Option<usize> {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit())
            {
                return None;
            }
            let i: usize = rest.parse().ok()?;
            (i >= 1 && i <= bound).then_some(i - 1)
        };
        if let Some(i) = var('x', self.n) {
            return Ok(ScalarExpr::Var(Var::X(i)));
        }
        if let Some(i) = var('u', self.m) {
            return Ok(ScalarExpr::Var(Var::U(i)));
        }
        let value = if name == "pi" {
            Some(std::f64::consts::PI)
        } else {
            self.constants.get(name).copied()
        };
        match value {
            Some(v) if v.is_finite() => Ok(ScalarExpr::constant(v)),
            Some(_) => Err(ParseError::Syntax {
                pos,
                msg: format!("constant '{name}' is not finite"),
            }),
            None => Err(ParseError::UnknownIdentifier {
                pos,
                name: name.to_string(),
            }),
        }
    }
}

const TAN_POLE_TOL: f64 = 1e-12;

impl ScalarExpr {
    /// Signed constant, encoded with a `Neg` node when negative.
    pub fn constant(v: f64) -> Self {
        if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
            ScalarExpr::Neg(Box::new(ScalarExpr::Const(-v)))
        } else {
            ScalarExpr::Const(v)
        }
    }

    pub fn x(i: usize) -> Self {
        ScalarExpr::Var(Var::X(i))
    }

    pub fn u(i: usize) -> Self {
        ScalarExpr::Var(Var::U(i))
    }

    pub fn bin(op: BinOp, a: ScalarExpr, b: ScalarExpr) -> Self {
        ScalarExpr::Bin(op, Box::new(a), Box::new(b))
    }

    /// `c * self`, folding `c == 1`.
    pub fn scaled(self, c: f64) -> Self {
        if c == 1.0 {
            self
        } else {
            ScalarExpr::bin(BinOp::Mul, ScalarExpr::constant(c), self)
        }
    }

    /// True if the tree mentions any control variable.
    pub fn uses_controls(&self) -> bool {
        match self {
            ScalarExpr::Const(_) => false,
            ScalarExpr::Var(v) => matches!(v, Var::U(_)),
            ScalarExpr::Neg(a) | ScalarExpr::Call1(_, a) => a.uses_controls(),
            ScalarExpr::Bin(_, a, b) | ScalarExpr::Call2(_, a, b) => {
                a.uses_controls() || b.uses_controls()
            }
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            ScalarExpr::Const(c) => *c,
            ScalarExpr::Var(Var::X(i)) => *x.get(*i).ok_or(EvalError::MissingVariable {
                name: format!("x{}", i + 1),
            })?,
            ScalarExpr::Var(Var::U(i)) => *u.get(*i).ok_or(EvalError::MissingVariable {
                name: format!("u{}", i + 1),
            })?,
            ScalarExpr::Neg(a) => -a.eval(x, u)?,
            ScalarExpr::Bin(op, a, b) => {
                let a = a.eval(x, u)?;
                let b = b.eval(x, u)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinOp::Pow => pow(a, b)?,
                }
            }
            ScalarExpr::Call1(f, a) => {
                let a = a.eval(x, u)?;
                match f {
                    Func1::Sin => a.sin(),
                    Func1::Cos => a.cos(),
                    Func1::Tan => {
                        if a.cos().abs() < TAN_POLE_TOL {
                            return Err(EvalError::TanPole { arg: a });
                        }
                        a.tan()
                    }
                    Func1::Atan => a.atan(),
                    Func1::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::SqrtNegative { arg: a });
                        }
                        a.sqrt()
                    }
                    Func1::Abs => a.abs(),
                    Func1::Exp => a.exp(),
                    Func1::Log => {
                        if a <= 0.0 {
                            return Err(EvalError::LogNonPositive { arg: a });
                        }
                        a.ln()
                    }
                    Func1::Sign => {
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
            ScalarExpr::Call2(f, a, b) => {
                let a = a.eval(x, u)?;
                let b = b.eval(x, u)?;
                match f {
                    Func2::Atan2 => a.atan2(b),
                    Func2::Min => a.min(b),
                    Func2::Max => a.max(b),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            ScalarExpr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            ScalarExpr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            ScalarExpr::Neg(_) => 3,
            ScalarExpr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

fn pow(a: f64, b: f64) -> Result<f64, EvalError> {
    if a == 0.0 && b < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    if a < 0.0 && b.fract() != 0.0 {
        return Err(EvalError::Domain {
            msg: format!("negative base {a} with non-integer exponent {b}"),
        });
    }
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        Ok(a.powi(b as i32))
    } else {
        Ok(a.powf(b))
    }
}

fn write_child(
    f: &mut fmt::Formatter<'_>,
    child: &ScalarExpr,
    needs_parens: bool,
) -> fmt::Result {
    if needs_parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Const(c) => write!(f, "{c}"),
            ScalarExpr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            ScalarExpr::Var(Var::U(i)) => write!(f, "u{}", i + 1),
            ScalarExpr::Neg(a) => {
                f.write_str("-")?;
                // `-(a^b)` needs no parens but `-(-a)` reads better with them.
                write_child(f, a, a.precedence() < 4 || matches!(**a, ScalarExpr::Neg(_)))
            }
            ScalarExpr::Bin(op, a, b) => {
                let p = self.precedence();
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                if *op == BinOp::Pow {
                    // Base must be an atom; exponent is parsed as a unary.
                    write_child(f, a, a.precedence() <= 4)?;
                    f.write_str(" ^ ")?;
                    write_child(f, b, b.precedence() < 3)
                } else {
                    write_child(f, a, a.precedence() < p)?;
                    write!(f, " {sym} ")?;
                    // Left associativity: equal precedence on the right needs parens.
                    write_child(f, b, b.precedence() <= p)
                }
            }
            ScalarExpr::Call1(func, a) => write!(f, "{}({a})", func.name()),
            ScalarExpr::Call2(func, a, b) => write!(f, "{}({a}, {b})", func.name()),
        }
    }
}
