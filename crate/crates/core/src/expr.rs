//! Small arithmetic expression language for habitat profiles and initial
//! data, so scenarios can say things like `1 + 0.5*cos(3.14159*x)` in a
//! config file instead of shipping sampled arrays.
//!
//! Grammar: `+ - * /`, right-associative `^`, unary minus, parentheses,
//! the unary functions `cos sin exp abs`, the variables `x` and `t`, and
//! decimal literals with an optional exponent part. Precedence from loose
//! to tight: `+ -`, `* /`, unary minus, `^`. So `-x^2` is `-(x^2)` and
//! `2^3^2` is `2^(3^2)`.
//!
//! Parsing is a Pratt loop over a flat token list; errors carry the byte
//! offset in the source string.

use thiserror::Error;

use crate::error::{self, Error};
use crate::grid::{Field, Grid};

const MAX_DEPTH: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected character '{ch}' at byte {at}")]
    UnexpectedChar { at: usize, ch: char },

    #[error("malformed number '{text}' at byte {at}")]
    BadNumber { at: usize, text: String },

    #[error("unknown name '{name}' at byte {at}")]
    UnknownName { at: usize, name: String },

    #[error("expected {expected} at byte {at}")]
    Expected { at: usize, expected: &'static str },

    #[error("unexpected end of input at byte {at}")]
    UnexpectedEnd { at: usize },

    #[error("expression nests deeper than {MAX_DEPTH} levels at byte {at}")]
    TooDeep { at: usize },
}

impl ParseError {
    /// Byte offset into the source string where the error was detected.
    pub fn offset(&self) -> usize {
        match self {
            ParseError::UnexpectedChar { at, .. }
            | ParseError::BadNumber { at, .. }
            | ParseError::UnknownName { at, .. }
            | ParseError::Expected { at, .. }
            | ParseError::UnexpectedEnd { at }
            | ParseError::TooDeep { at } => *at,
        }
    }
}

/// Evaluation failure. These are runtime domain errors, distinct from
/// syntax errors caught at parse time.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,

    #[error("result is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Cos,
    Sin,
    Exp,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: f64, t: f64) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::T) => t,
            Expr::Neg(e) => -e.eval(x, t)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval(x, t)?;
                let b = b.eval(x, t)?;
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
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(x, t)?;
                match f {
                    Func::Cos => v.cos(),
                    Func::Sin => v.sin(),
                    Func::Exp => v.exp(),
                    Func::Abs => v.abs(),
                }
            }
        };
        if !v.is_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok(v)
    }

    /// Evaluates at every grid node for a fixed `t`.
    pub fn sample(&self, grid: Grid, t: f64) -> error::Result<Field> {
        let mut vals = Vec::with_capacity(grid.n_nodes());
        for (j, x) in grid.nodes().enumerate() {
            match self.eval(x, t) {
                Ok(v) => vals.push(v),
                Err(e) => {
                    return Err(Error::Sample {
                        node: j,
                        x,
                        reason: e.to_string(),
                    })
                }
            }
        }
        Field::new(grid, vals)
    }
}

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let e = p.expr_bp(0, 0)?;
    if let Some(t) = p.peek() {
        return Err(ParseError::Expected {
            at: t.at,
            expected: "end of input",
        });
    }
    Ok(e)
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

#[derive(Debug, Clone)]
struct Lexed {
    tok: Tok,
    at: usize,
}

fn lex(src: &str) -> Result<Vec<Lexed>, ParseError> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let at = i;
        let c = b[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                out.push(Lexed { tok: Tok::Plus, at });
                i += 1;
            }
            b'-' => {
                out.push(Lexed { tok: Tok::Minus, at });
                i += 1;
            }
            b'*' => {
                out.push(Lexed { tok: Tok::Star, at });
                i += 1;
            }
            b'/' => {
                out.push(Lexed { tok: Tok::Slash, at });
                i += 1;
            }
            b'^' => {
                out.push(Lexed { tok: Tok::Caret, at });
                i += 1;
            }
            b'(' => {
                out.push(Lexed { tok: Tok::LParen, at });
                i += 1;
            }
            b')' => {
                out.push(Lexed { tok: Tok::RParen, at });
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                    i += 1;
                }
                // exponent part only if a digit actually follows it
                if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                    let mut k = i + 1;
                    if k < b.len() && (b[k] == b'+' || b[k] == b'-') {
                        k += 1;
                    }
                    if k < b.len() && b[k].is_ascii_digit() {
                        i = k;
                        while i < b.len() && b[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[at..i];
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => out.push(Lexed { tok: Tok::Num(v), at }),
                    _ => {
                        return Err(ParseError::BadNumber {
                            at,
                            text: text.to_string(),
                        })
                    }
                }
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                out.push(Lexed {
                    tok: Tok::Ident(src[at..i].to_string()),
                    at,
                });
            }
            _ => {
                let ch = src[at..].chars().next().unwrap();
                return Err(ParseError::UnexpectedChar { at, ch });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexed> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Lexed> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.bump() {
            Some(Lexed {
                tok: Tok::RParen, ..
            }) => Ok(()),
            Some(t) => Err(ParseError::Expected {
                at: t.at,
                expected: "')'",
            }),
            None => Err(ParseError::UnexpectedEnd { at: self.end }),
        }
    }

    fn expr_bp(&mut self, min_bp: u8, depth: u32) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            let at = self.peek().map(|t| t.at).unwrap_or(self.end);
            return Err(ParseError::TooDeep { at });
        }
        let head = match self.bump() {
            Some(t) => t,
            None => return Err(ParseError::UnexpectedEnd { at: self.end }),
        };
        let mut lhs = match head.tok {
            Tok::Num(v) => Expr::Num(v),
            Tok::Ident(name) => match name.as_str() {
                "x" => Expr::Var(Var::X),
                "t" => Expr::Var(Var::T),
                "cos" | "sin" | "exp" | "abs" => {
                    let f = match name.as_str() {
                        "cos" => Func::Cos,
                        "sin" => Func::Sin,
                        "exp" => Func::Exp,
                        _ => Func::Abs,
                    };
                    match self.bump() {
                        Some(Lexed {
                            tok: Tok::LParen, ..
                        }) => {}
                        Some(t) => {
                            return Err(ParseError::Expected {
                                at: t.at,
                                expected: "'(' after function name",
                            })
                        }
                        None => return Err(ParseError::UnexpectedEnd { at: self.end }),
                    }
                    let arg = self.expr_bp(0, depth + 1)?;
                    self.expect_rparen()?;
                    Expr::Call(f, Box::new(arg))
                }
                _ => return Err(ParseError::UnknownName { at: head.at, name }),
            },
            Tok::Minus => Expr::Neg(Box::new(self.expr_bp(5, depth + 1)?)),
            Tok::LParen => {
                let e = self.expr_bp(0, depth + 1)?;
                self.expect_rparen()?;
                e
            }
            _ => {
                return Err(ParseError::Expected {
                    at: head.at,
                    expected: "an expression",
                })
            }
        };
        loop {
            let (op, lbp, rbp) = match self.peek().map(|t| &t.tok) {
                Some(Tok::Plus) => (BinOp::Add, 1, 2),
                Some(Tok::Minus) => (BinOp::Sub, 1, 2),
                Some(Tok::Star) => (BinOp::Mul, 3, 4),
                Some(Tok::Slash) => (BinOp::Div, 3, 4),
                Some(Tok::Caret) => (BinOp::Pow, 8, 7),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.expr_bp(rbp, depth + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }
}
