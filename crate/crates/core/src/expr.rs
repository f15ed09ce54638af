//! Symbolic expressions in the two variables `x` and `y`.
//!
//! The grammar is deliberately small: decimal literals, `x`, `y`, unary
//! minus, the binary operators `+ - * / ^` (with `^` right-associative and
//! binding tighter than unary minus), the functions `exp`, `log`, `sqrt`,
//! `abs`, and parentheses. There is no implicit multiplication: `2x` is a
//! syntax error, write `2*x`.
//!
//! Evaluation never panics. A division by zero, `log` of a non-positive
//! number, `sqrt` of a negative number, or an indeterminate power is
//! reported as an [`EvalError`] carrying the offending subexpression.
//!
//! ```
//! use tolerance_core::expr::Expr;
//!
//! let f = Expr::parse("x^2/(1+y) - x").unwrap();
//! assert_eq!(f.eval(4.0, 0.0).unwrap(), 12.0);
//!
//! let fy = f.differentiate('y').unwrap();
//! // d/dy [x^2/(1+y)] = -x^2/(1+y)^2
//! assert!((fy.eval(1.0, 0.0).unwrap() - -1.0).abs() < 1e-12);
//! ```

use std::fmt;

use thiserror::Error;

/// One of the two expression variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

/// A unary function recognized by the grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Immutable expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// What went wrong while evaluating an expression at a point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DomainFault {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    /// `0^negative`, or a negative base raised to a non-integer power.
    IndeterminatePower,
    NonFinite,
}

impl fmt::Display for DomainFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            DomainFault::DivisionByZero => "division by zero",
            DomainFault::LogNonPositive => "log of a non-positive value",
            DomainFault::SqrtNegative => "sqrt of a negative value",
            DomainFault::IndeterminatePower => "indeterminate power",
            DomainFault::NonFinite => "non-finite result",
        };
        f.write_str(msg)
    }
}

/// Evaluation failure: the fault plus the subexpression that produced it.
#[derive(Clone, Debug, Error, PartialEq)]
#[error("{fault} in `{subexpr}` at (x, y) = ({x}, {y})")]
pub struct EvalError {
    pub fault: DomainFault,
    /// Rendered form of the offending subexpression.
    pub subexpr: String,
    pub x: f64,
    pub y: f64,
}

/// Parse or differentiation failure.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum ExprError {
    /// Byte offset of the first character the parser could not accept.
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unknown differentiation variable `{0}`; expected 'x' or 'y'")]
    BadVariable(char),
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
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

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    offset: usize,
}

fn lex(input: &str) -> Result<Vec<Spanned>, ExprError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
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
                out.push(Spanned { tok, offset: i });
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
                // Exponent part, e.g. 1e-3. Only consumed when well formed.
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
                let text = &input[start..i];
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push(Spanned {
                    tok: Tok::Num(value),
                    offset: start,
                });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Spanned {
                    tok: Tok::Ident(input[start..i].to_string()),
                    offset: start,
                });
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser (recursive descent)
// ---------------------------------------------------------------------------
//
//   expr  := term (('+' | '-') term)*
//   term  := unary (('*' | '/') unary)*
//   unary := '-' unary | power
//   power := atom ('^' unary)?          -- right-associative
//   atom  := number | 'x' | 'y' | func '(' expr ')' | '(' expr ')'

struct Parser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    input_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next_offset(&self) -> usize {
        self.peek().map(|s| s.offset).unwrap_or(self.input_len)
    }

    fn bump(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        match self.peek() {
            Some(s) if s.tok == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ExprError::Syntax {
                offset: self.next_offset(),
                message: format!("expected {what}"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(s) = self.peek() {
            match s.tok {
                Tok::Plus => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(s) = self.peek() {
            match s.tok {
                Tok::Star => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(s) = self.peek() {
            if s.tok == Tok::Minus {
                self.pos += 1;
                return Ok(Expr::Neg(Box::new(self.unary()?)));
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(s) = self.peek() {
            if s.tok == Tok::Caret {
                self.pos += 1;
                // The exponent may carry a sign: `x^-2` means `x^(-2)`.
                let exponent = self.unary()?;
                return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.next_offset();
        match self.bump() {
            Some(Spanned {
                tok: Tok::Num(v), ..
            }) => Ok(Expr::Const(v)),
            Some(Spanned {
                tok: Tok::Ident(name),
                offset,
            }) => match name.as_str() {
                "x" => Ok(Expr::Var(Var::X)),
                "y" => Ok(Expr::Var(Var::Y)),
                "exp" | "log" | "sqrt" | "abs" => {
                    let func = match name.as_str() {
                        "exp" => Func::Exp,
                        "log" => Func::Log,
                        "sqrt" => Func::Sqrt,
                        _ => Func::Abs,
                    };
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Call(func, Box::new(arg)))
                }
                _ => Err(ExprError::UnknownIdentifier { name, offset }),
            },
            Some(Spanned {
                tok: Tok::LParen, ..
            }) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(ExprError::Syntax {
                offset,
                message: "expected a number, variable, function, or `(`".into(),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation / differentiation
// ---------------------------------------------------------------------------

/// `b` raised to an integer power by repeated squaring, to keep integer
/// exponents exact-ish and free of `exp`/`log` round-off.
fn powi(base: f64, n: i32) -> f64 {
    base.powi(n)
}

/// Exponent values treated as integers when they are exactly integral.
fn as_integer_exponent(e: &Expr) -> Option<i32> {
    match e {
        Expr::Const(c) if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 => Some(*c as i32),
        Expr::Neg(inner) => as_integer_exponent(inner).map(|n| -n),
        _ => None,
    }
}

impl Expr {
    /// Parse the textual form of an expression. Offsets in errors are
    /// 0-based byte positions into `input`.
    pub fn parse(input: &str) -> Result<Expr, ExprError> {
        let toks = lex(input)?;
        let mut p = Parser {
            toks: &toks,
            pos: 0,
            input_len: input.len(),
        };
        let e = p.expr()?;
        if let Some(s) = p.peek() {
            return Err(ExprError::Syntax {
                offset: s.offset,
                message: "unexpected trailing input".into(),
            });
        }
        Ok(e)
    }

    fn fault(&self, fault: DomainFault, x: f64, y: f64) -> EvalError {
        EvalError {
            fault,
            subexpr: self.to_string(),
            x,
            y,
        }
    }

    /// Evaluate at the point `(x, y)`. Pure and deterministic: identical
    /// inputs give bit-identical results.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Neg(e) => -e.eval(x, y)?,
            Expr::Add(a, b) => a.eval(x, y)? + b.eval(x, y)?,
            Expr::Sub(a, b) => a.eval(x, y)? - b.eval(x, y)?,
            Expr::Mul(a, b) => a.eval(x, y)? * b.eval(x, y)?,
            Expr::Div(a, b) => {
                let den = b.eval(x, y)?;
                if den == 0.0 {
                    return Err(self.fault(DomainFault::DivisionByZero, x, y));
                }
                a.eval(x, y)? / den
            }
            Expr::Pow(base, exp) => {
                let b = base.eval(x, y)?;
                if let Some(n) = as_integer_exponent(exp) {
                    if b == 0.0 && n < 0 {
                        return Err(self.fault(DomainFault::DivisionByZero, x, y));
                    }
                    powi(b, n)
                } else {
                    let e = exp.eval(x, y)?;
                    if b == 0.0 && e < 0.0 {
                        return Err(self.fault(DomainFault::DivisionByZero, x, y));
                    }
                    if b < 0.0 && e.fract() != 0.0 {
                        return Err(self.fault(DomainFault::IndeterminatePower, x, y));
                    }
                    b.powf(e)
                }
            }
            Expr::Call(func, arg) => {
                let a = arg.eval(x, y)?;
                match func {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(self.fault(DomainFault::LogNonPositive, x, y));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(self.fault(DomainFault::SqrtNegative, x, y));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                }
            }
        };
        if v.is_nan() {
            return Err(self.fault(DomainFault::NonFinite, x, y));
        }
        Ok(v)
    }

    /// Symbolic partial derivative with respect to `var` ('x' or 'y').
    /// The result stays inside the same grammar; in particular
    /// `d/du abs(u) = u / abs(u)`, which is undefined at `u = 0` exactly
    /// where the derivative itself is.
    pub fn differentiate(&self, var: char) -> Result<Expr, ExprError> {
        let v = match var {
            'x' => Var::X,
            'y' => Var::Y,
            other => return Err(ExprError::BadVariable(other)),
        };
        Ok(self.diff(v).simplified())
    }

    fn diff(&self, var: Var) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(w) => Const(if *w == var { 1.0 } else { 0.0 }),
            Neg(e) => Neg(Box::new(e.diff(var))),
            Add(a, b) => Add(Box::new(a.diff(var)), Box::new(b.diff(var))),
            Sub(a, b) => Sub(Box::new(a.diff(var)), Box::new(b.diff(var))),
            Mul(a, b) => Add(
                Box::new(Mul(Box::new(a.diff(var)), b.clone())),
                Box::new(Mul(a.clone(), Box::new(b.diff(var)))),
            ),
            Div(a, b) => Div(
                Box::new(Sub(
                    Box::new(Mul(Box::new(a.diff(var)), b.clone())),
                    Box::new(Mul(a.clone(), Box::new(b.diff(var)))),
                )),
                Box::new(Pow(b.clone(), Box::new(Const(2.0)))),
            ),
            Pow(base, exp) => {
                if let Some(n) = as_integer_exponent(exp) {
                    // d(b^n) = n * b^(n-1) * b'
                    Mul(
                        Box::new(Const(n as f64)),
                        Box::new(Mul(
                            Box::new(Pow(base.clone(), Box::new(Const((n - 1) as f64)))),
                            Box::new(base.diff(var)),
                        )),
                    )
                } else if matches!(**exp, Const(_)) {
                    // d(b^c) = c * b^(c-1) * b'
                    let c = match **exp {
                        Const(c) => c,
                        _ => unreachable!(),
                    };
                    Mul(
                        Box::new(Const(c)),
                        Box::new(Mul(
                            Box::new(Pow(base.clone(), Box::new(Const(c - 1.0)))),
                            Box::new(base.diff(var)),
                        )),
                    )
                } else {
                    // General case: b^e * (e' * log(b) + e * b' / b)
                    Mul(
                        Box::new(self.clone()),
                        Box::new(Add(
                            Box::new(Mul(
                                Box::new(exp.diff(var)),
                                Box::new(Call(Func::Log, base.clone())),
                            )),
                            Box::new(Div(
                                Box::new(Mul(exp.clone(), Box::new(base.diff(var)))),
                                base.clone(),
                            )),
                        )),
                    )
                }
            }
            Call(func, arg) => {
                let da = arg.diff(var);
                let outer = match func {
                    Func::Exp => Call(Func::Exp, arg.clone()),
                    Func::Log => Div(Box::new(Const(1.0)), arg.clone()),
                    Func::Sqrt => Div(
                        Box::new(Const(1.0)),
                        Box::new(Mul(
                            Box::new(Const(2.0)),
                            Box::new(Call(Func::Sqrt, arg.clone())),
                        )),
                    ),
                    Func::Abs => Div(arg.clone(), Box::new(Call(Func::Abs, arg.clone()))),
                };
                Mul(Box::new(outer), Box::new(da))
            }
        }
    }

    /// Light structural simplification: drops additive/multiplicative
    /// identities, folds constant subtrees, collapses double negation.
    /// Best-effort only; no deep rewriting.
    pub fn simplified(&self) -> Expr {
        use Expr::*;
        let simplify2 = |a: &Expr, b: &Expr| (a.simplified(), b.simplified());
        match self {
            Const(_) | Var(_) => self.clone(),
            Neg(e) => match e.simplified() {
                Const(c) => Const(-c),
                Neg(inner) => *inner,
                s => Neg(Box::new(s)),
            },
            Add(a, b) => match simplify2(a, b) {
                (Const(x), Const(y)) => Const(x + y),
                (Const(c), s) if c == 0.0 => s,
                (s, Const(c)) if c == 0.0 => s,
                (sa, sb) => Add(Box::new(sa), Box::new(sb)),
            },
            Sub(a, b) => match simplify2(a, b) {
                (Const(x), Const(y)) => Const(x - y),
                (s, Const(c)) if c == 0.0 => s,
                (Const(c), s) if c == 0.0 => Neg(Box::new(s)).simplified(),
                (sa, sb) => Sub(Box::new(sa), Box::new(sb)),
            },
            Mul(a, b) => match simplify2(a, b) {
                (Const(x), Const(y)) => Const(x * y),
                (Const(c), _) | (_, Const(c)) if c == 0.0 => Const(0.0),
                (Const(c), s) if c == 1.0 => s,
                (s, Const(c)) if c == 1.0 => s,
                (sa, sb) => Mul(Box::new(sa), Box::new(sb)),
            },
            Div(a, b) => match simplify2(a, b) {
                (s, Const(c)) if c == 1.0 => s,
                (Const(c), sb) if c == 0.0 && !matches!(sb, Const(_)) => Const(0.0),
                (sa, sb) => Div(Box::new(sa), Box::new(sb)),
            },
            Pow(a, b) => match simplify2(a, b) {
                (s, Const(c)) if c == 1.0 => s,
                (_, Const(c)) if c == 0.0 => Const(1.0),
                (sa, sb) => Pow(Box::new(sa), Box::new(sb)),
            },
            Call(f, a) => Call(*f, Box::new(a.simplified())),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }

    fn fmt_child(&self, child: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let needs_parens = child.precedence() < min_prec
            || matches!(child, Expr::Const(c) if *c < 0.0);
        if needs_parens {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Expr {
    /// Prints a form that re-parses to an evaluation-equivalent expression.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Var(Var::Y) => f.write_str("y"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                self.fmt_child(e, 3, f)
            }
            Expr::Add(a, b) => {
                self.fmt_child(a, 1, f)?;
                f.write_str(" + ")?;
                self.fmt_child(b, 2, f)
            }
            Expr::Sub(a, b) => {
                self.fmt_child(a, 1, f)?;
                f.write_str(" - ")?;
                self.fmt_child(b, 2, f)
            }
            Expr::Mul(a, b) => {
                self.fmt_child(a, 2, f)?;
                f.write_str("*")?;
                self.fmt_child(b, 3, f)
            }
            Expr::Div(a, b) => {
                self.fmt_child(a, 2, f)?;
                f.write_str("/")?;
                self.fmt_child(b, 3, f)
            }
            Expr::Pow(a, b) => {
                // Base must bind tighter than ^; exponent re-parses via unary.
                self.fmt_child(a, 5, f)?;
                f.write_str("^")?;
                self.fmt_child(b, 4, f)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
