//! A small arithmetic language for coefficients in config files.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | t | x | y | func '(' expr (',' expr)* ')' | '(' expr ')'
//! func   := abs | pow | sqrt | sin | cos | exp | ln | min | max
//! ```
//!
//! So `-x^2` is `-(x^2)` and `2^-3^2` is `2^(-(3^2))`. Parsing is Pratt style
//! over binding powers; the grammar above is the equivalent recursive form.

use std::fmt;

use thiserror::Error;

/// Byte range `[start, end)` into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdent { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdent { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error in `{snippet}` (bytes {}..{}): {message}", span.start, span.end)]
pub struct EvalError {
    pub span: Span,
    pub snippet: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    /// (left, right) binding power.
    fn binding(self) -> (u8, u8) {
        match self {
            BinOp::Add | BinOp::Sub => (10, 11),
            BinOp::Mul | BinOp::Div => (20, 21),
            BinOp::Pow => (41, 40),
        }
    }
}

const UNARY_MINUS_BP: u8 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Pow,
    Sqrt,
    Sin,
    Cos,
    Exp,
    Ln,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Pow => "pow",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Parsed expression. Equality compares structure only, not spans.
#[derive(Debug, Clone)]
pub struct Expr {
    pub node: Node,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.node, &other.node) {
            (Node::Num(a), Node::Num(b)) => a.to_bits() == b.to_bits(),
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Neg(a), Node::Neg(b)) => a == b,
            (Node::Binary(o, a, b), Node::Binary(p, c, d)) => o == p && a == c && b == d,
            (Node::Call(f, a), Node::Call(g, b)) => f == g && a == b,
            _ => false,
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        len: src.len(),
    };
    let e = p.expr(0)?;
    match p.peek() {
        None => Ok(e),
        Some(tok) => Err(ParseError::Syntax {
            offset: tok.span.start,
            expected: "operator or end of input".into(),
        }),
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(BinOp),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = |tok| Token {
            tok,
            span: Span {
                start,
                end: start + 1,
            },
        };
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => out.push(single(Tok::Op(BinOp::Add))),
            b'-' => out.push(single(Tok::Op(BinOp::Sub))),
            b'*' => out.push(single(Tok::Op(BinOp::Mul))),
            b'/' => out.push(single(Tok::Op(BinOp::Div))),
            b'^' => out.push(single(Tok::Op(BinOp::Pow))),
            b'(' => out.push(single(Tok::LParen)),
            b')' => out.push(single(Tok::RParen)),
            b',' => out.push(single(Tok::Comma)),
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                // exponent part, only if digits follow
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text = &src[i..j];
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: i,
                    expected: "a number".into(),
                })?;
                out.push(Token {
                    tok: Tok::Num(v),
                    span: Span { start: i, end: j },
                });
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(src[i..j].to_string()),
                    span: Span { start: i, end: j },
                });
                i = j;
                continue;
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset: i,
                    expected: "number, identifier, operator or parenthesis".into(),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.len, |t| t.span.start)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Span, ParseError> {
        match self.peek() {
            Some(t) if t.tok == want => {
                let s = t.span;
                self.pos += 1;
                Ok(s)
            }
            _ => Err(ParseError::Syntax {
                offset: self.here(),
                expected: what.into(),
            }),
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match self.peek() {
                Some(Token {
                    tok: Tok::Op(op), ..
                }) => *op,
                _ => break,
            };
            let (l_bp, r_bp) = op.binding();
            if l_bp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(r_bp)?;
            let span = Span {
                start: lhs.span.start,
                end: rhs.span.end,
            };
            lhs = Expr {
                node: Node::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ParseError> {
        let offset = self.here();
        let Some(tok) = self.next() else {
            return Err(ParseError::Syntax {
                offset,
                expected: "an operand".into(),
            });
        };
        match tok.tok {
            Tok::Num(v) => Ok(Expr {
                node: Node::Num(v),
                span: tok.span,
            }),
            Tok::Op(BinOp::Sub) => {
                let inner = self.expr(UNARY_MINUS_BP)?;
                let span = Span {
                    start: tok.span.start,
                    end: inner.span.end,
                };
                Ok(Expr {
                    node: Node::Neg(Box::new(inner)),
                    span,
                })
            }
            Tok::LParen => {
                let inner = self.expr(0)?;
                let close = self.expect(Tok::RParen, "`)`")?;
                // keep the parenthesized span so domain errors point at the group
                Ok(Expr {
                    node: inner.node,
                    span: Span {
                        start: tok.span.start,
                        end: close.end,
                    },
                })
            }
            Tok::Ident(name) => {
                let var = match name.as_str() {
                    "t" => Some(Var::T),
                    "x" => Some(Var::X),
                    "y" => Some(Var::Y),
                    _ => None,
                };
                if let Some(v) = var {
                    return Ok(Expr {
                        node: Node::Var(v),
                        span: tok.span,
                    });
                }
                let Some(func) = Func::lookup(&name) else {
                    return Err(ParseError::UnknownIdent {
                        offset: tok.span.start,
                        name,
                    });
                };
                self.expect(Tok::LParen, "`(` after function name")?;
                let mut args = vec![self.expr(0)?];
                while matches!(self.peek(), Some(Token { tok: Tok::Comma, .. })) {
                    self.pos += 1;
                    args.push(self.expr(0)?);
                }
                let offset = self.here();
                let close = self.expect(Tok::RParen, "`)` or `,`")?;
                if args.len() != func.arity() {
                    return Err(ParseError::Syntax {
                        offset,
                        expected: format!("{} argument(s) for {}", func.arity(), func.name()),
                    });
                }
                Ok(Expr {
                    node: Node::Call(func, args),
                    span: Span {
                        start: tok.span.start,
                        end: close.end,
                    },
                })
            }
            _ => Err(ParseError::Syntax {
                offset: tok.span.start,
                expected: "an operand".into(),
            }),
        }
    }
}

/// `b^p` for real operands. The `0^p` limit is 0 for `p > 0`.
fn real_pow(b: f64, p: f64) -> Result<f64, &'static str> {
    if b == 0.0 {
        return if p > 0.0 {
            Ok(0.0)
        } else if p == 0.0 {
            Ok(1.0)
        } else {
            Err("zero raised to a negative power")
        };
    }
    if b < 0.0 && p.fract() != 0.0 {
        return Err("negative base with non-integer exponent");
    }
    Ok(b.powf(p))
}

impl Expr {
    pub fn eval(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        let fail = |message: &str| EvalError {
            span: self.span,
            snippet: self.to_string(),
            message: message.to_string(),
        };
        let v = match &self.node {
            Node::Num(v) => *v,
            Node::Var(Var::T) => t,
            Node::Var(Var::X) => x,
            Node::Var(Var::Y) => y,
            Node::Neg(e) => -e.eval(t, x, y)?,
            Node::Binary(op, a, b) => {
                let (a, b) = (a.eval(t, x, y)?, b.eval(t, x, y)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(fail("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => real_pow(a, b).map_err(fail)?,
                }
            }
            Node::Call(func, args) => {
                let a = args[0].eval(t, x, y)?;
                match func {
                    Func::Abs => a.abs(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(fail("square root of a negative number"));
                        }
                        a.sqrt()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Ln => {
                        if a <= 0.0 {
                            return Err(fail("logarithm of a non-positive number"));
                        }
                        a.ln()
                    }
                    Func::Pow => real_pow(a, args[1].eval(t, x, y)?).map_err(fail)?,
                    Func::Min => a.min(args[1].eval(t, x, y)?),
                    Func::Max => a.max(args[1].eval(t, x, y)?),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fail("result is not finite"))
        }
    }

    pub fn uses_variables(&self) -> bool {
        match &self.node {
            Node::Num(_) => false,
            Node::Var(_) => true,
            Node::Neg(e) => e.uses_variables(),
            Node::Binary(_, a, b) => a.uses_variables() || b.uses_variables(),
            Node::Call(_, args) => args.iter().any(Expr::uses_variables),
        }
    }
}

/// Fully parenthesized rendering; re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(Var::T) => f.write_str("t"),
            Node::Var(Var::X) => f.write_str("x"),
            Node::Var(Var::Y) => f.write_str("y"),
            Node::Neg(e) => write!(f, "(-{e})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
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
