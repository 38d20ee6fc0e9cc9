//! A small arithmetic expression language for user-defined fields.
//!
//! Grammar (`^` is right-associative, unary minus binds to a base):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := base ('^' factor)?
//! base   := number | 'x' INT | func '(' expr ')' | '(' expr ')' | '-' base
//! func   := exp | log | sqrt
//! ```
//!
//! Direction expressions additionally accept `g<i>`, `p<i>` and `m`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    /// Zero-based bundle coordinate.
    X(usize),
    /// Zero-based field component.
    G(usize),
    /// Zero-based price component.
    P(usize),
    /// Income.
    M,
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
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Symbol),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Which symbols an expression may reference.
#[derive(Debug, Clone, Copy)]
pub struct SymbolSet {
    pub dim: usize,
    pub direction: bool,
}

/// Values bound to the symbols during evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub x: &'a [f64],
    pub g: Option<&'a [f64]>,
    pub p: Option<&'a [f64]>,
    pub m: Option<f64>,
}

impl<'a> Env<'a> {
    pub fn point(x: &'a [f64]) -> Self {
        Env {
            x,
            ..Default::default()
        }
    }
}

/// Parses a field component over `x1..x<dim>`.
pub fn parse_field_expr(text: &str, dim: usize) -> Result<Expr> {
    parse_with(
        text,
        SymbolSet {
            dim,
            direction: false,
        },
    )
}

/// Parses an improvement-direction component over `x`, `g`, `p` and `m`.
pub fn parse_direction_expr(text: &str, dim: usize) -> Result<Expr> {
    parse_with(
        text,
        SymbolSet {
            dim,
            direction: true,
        },
    )
}

pub fn parse_with(text: &str, symbols: SymbolSet) -> Result<Expr> {
    if text.trim().is_empty() {
        return Err(Error::Syntax {
            position: 0,
            message: "empty expression".into(),
        });
    }
    let tokens = lex(text, symbols)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        len: text.len(),
    };
    let expr = parser.expr()?;
    if let Some((tok, at)) = parser.tokens.get(parser.pos) {
        return Err(Error::Syntax {
            position: *at,
            message: format!("unexpected {tok:?}"),
        });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Var(Symbol),
    Func(Func),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str, symbols: SymbolSet) -> Result<Vec<(Token, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Token::Plus, start)),
            b'-' => out.push((Token::Minus, start)),
            b'*' => out.push((Token::Star, start)),
            b'/' => out.push((Token::Slash, start)),
            b'^' => out.push((Token::Caret, start)),
            b'(' => out.push((Token::LParen, start)),
            b')' => out.push((Token::RParen, start)),
            b'0'..=b'9' | b'.' => {
                i = scan_number(bytes, i);
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| Error::Syntax {
                    position: start,
                    message: format!("malformed number {lit:?}"),
                })?;
                out.push((Token::Num(value), start));
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' => {
                while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let word = &text[start..i];
                let digits_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let digits = &text[digits_start..i];
                let token = word_token(word, digits, start, symbols)?;
                out.push((token, start));
                continue;
            }
            _ => {
                return Err(Error::Syntax {
                    position: start,
                    message: format!("unexpected character {:?}", c as char),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
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
    i
}

fn word_token(word: &str, digits: &str, at: usize, symbols: SymbolSet) -> Result<Token> {
    let indexed = |ctor: fn(usize) -> Symbol| -> Result<Token> {
        let index: usize = digits.parse().map_err(|_| Error::Syntax {
            position: at,
            message: format!("{word} needs an index"),
        })?;
        if index == 0 || index > symbols.dim {
            return Err(Error::VariableOutOfRange {
                index,
                dim: symbols.dim,
            });
        }
        Ok(Token::Var(ctor(index - 1)))
    };
    match (word, digits.is_empty()) {
        ("x", _) => indexed(Symbol::X),
        ("g", _) if symbols.direction => indexed(Symbol::G),
        ("p", _) if symbols.direction => indexed(Symbol::P),
        ("m", true) if symbols.direction => Ok(Token::Var(Symbol::M)),
        ("exp", true) => Ok(Token::Func(Func::Exp)),
        ("log", true) => Ok(Token::Func(Func::Log)),
        ("sqrt", true) => Ok(Token::Func(Func::Sqrt)),
        _ => Err(Error::Syntax {
            position: at,
            message: format!("unknown identifier {word}{digits}"),
        }),
    }
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.len, |(_, at)| *at)
    }

    fn fail<T>(&self, message: &str) -> Result<T> {
        Err(Error::Syntax {
            position: self.position(),
            message: message.into(),
        })
    }

    fn expect(&mut self, token: Token) -> Result<()> {
        if self.peek() == Some(&token) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(&format!("expected {token:?}"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.base()?;
        if self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::Var(s)) => {
                self.pos += 1;
                Ok(Expr::Var(s))
            }
            Some(Token::Func(f)) => {
                self.pos += 1;
                self.expect(Token::LParen)?;
                let arg = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(Expr::Call(f, Box::new(arg)))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.base()?)))
            }
            Some(_) => self.fail("expected a number, variable, function or '('"),
            None => self.fail("unexpected end of input"),
        }
    }
}

impl Expr {
    pub fn eval(&self, env: &Env<'_>) -> Result<f64> {
        let value = match self {
            Expr::Num(v) => *v,
            Expr::Var(s) => lookup(*s, env)?,
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::Evaluation("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, arg) => {
                let a = arg.eval(env)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Log if a <= 0.0 => {
                        return Err(Error::Evaluation(format!("log of non-positive value {a}")))
                    }
                    Func::Log => a.ln(),
                    Func::Sqrt if a < 0.0 => {
                        return Err(Error::Evaluation(format!("sqrt of negative value {a}")))
                    }
                    Func::Sqrt => a.sqrt(),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Evaluation(format!("non-finite result in {self}")))
        }
    }

    /// True when the tree references `g`, `p` or `m`.
    pub fn uses_direction_symbols(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(s) => !matches!(s, Symbol::X(_)),
            Expr::Neg(e) | Expr::Call(_, e) => e.uses_direction_symbols(),
            Expr::Binary(_, a, b) => a.uses_direction_symbols() || b.uses_direction_symbols(),
        }
    }
}

fn lookup(symbol: Symbol, env: &Env<'_>) -> Result<f64> {
    let missing = |name: &str| Error::Evaluation(format!("symbol {name} is not bound"));
    let at = |values: &[f64], i: usize, name: &str| {
        values
            .get(i)
            .copied()
            .ok_or_else(|| Error::Evaluation(format!("{name}{} out of range", i + 1)))
    };
    match symbol {
        Symbol::X(i) => at(env.x, i, "x"),
        Symbol::G(i) => at(env.g.ok_or_else(|| missing("g"))?, i, "g"),
        Symbol::P(i) => at(env.p.ok_or_else(|| missing("p"))?, i, "p"),
        Symbol::M => env.m.ok_or_else(|| missing("m")),
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::X(i) => write!(f, "x{}", i + 1),
            Symbol::G(i) => write!(f, "g{}", i + 1),
            Symbol::P(i) => write!(f, "p{}", i + 1),
            Symbol::M => write!(f, "m"),
        }
    }
}

/// Fully parenthesized output; re-parses to an equivalent tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(s) => write!(f, "{s}"),
            Expr::Neg(e) => write!(f, "(-({e}))"),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Box<Expr> {
        Box::new(Expr::Var(Symbol::X(i)))
    }

    #[test]
    fn constant_over_variable() {
        let e = parse_field_expr("0.5/x1", 2).unwrap();
        assert_eq!(e, Expr::Binary(BinOp::Div, Box::new(Expr::Num(0.5)), x(0)));
    }

    #[test]
    fn single_variable() {
        assert_eq!(parse_field_expr("x2", 3).unwrap(), Expr::Var(Symbol::X(1)));
    }

    #[test]
    fn power_and_unary_minus_inside_exp() {
        let e = parse_field_expr("x1^2 + exp(-x2)", 2).unwrap();
        let expected = Expr::Binary(
            BinOp::Add,
            Box::new(Expr::Binary(BinOp::Pow, x(0), Box::new(Expr::Num(2.0)))),
            Box::new(Expr::Call(Func::Exp, Box::new(Expr::Neg(x(1))))),
        );
        assert_eq!(e, expected);
        let v = e.eval(&Env::point(&[2.0, 0.5])).unwrap();
        assert!((v - (4.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert!((v - 4.606531).abs() < 1e-6);
    }

    #[test]
    fn power_is_right_associative() {
        let e = parse_field_expr("2^3^2", 1).unwrap();
        assert_eq!(e.eval(&Env::point(&[1.0])).unwrap(), 512.0);
    }

    #[test]
    fn unary_minus_binds_to_base() {
        // -x1^2 parses as (-x1)^2 under this grammar.
        let e = parse_field_expr("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&Env::point(&[3.0])).unwrap(), 9.0);
    }

    #[test]
    fn scientific_literals() {
        let e = parse_field_expr("1.5e-3*x1 + 2E2", 1).unwrap();
        assert!((e.eval(&Env::point(&[2.0])).unwrap() - 200.003).abs() < 1e-12);
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_field_expr("x1 + * x2", 2) {
            Err(Error::Syntax { position, .. }) => assert_eq!(position, 5),
            other => panic!("unexpected {other:?}"),
        }
        match parse_field_expr("(x1 + x2", 2) {
            Err(Error::Syntax { position, .. }) => assert_eq!(position, 8),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_field_expr("x1 x2", 2), Err(Error::Syntax { position: 3, .. })));
        assert!(matches!(parse_field_expr("", 2), Err(Error::Syntax { .. })));
        assert!(matches!(parse_field_expr("x1 # 2", 2), Err(Error::Syntax { position: 3, .. })));
    }

    #[test]
    fn variable_index_out_of_range() {
        assert!(matches!(
            parse_field_expr("x3", 2),
            Err(Error::VariableOutOfRange { index: 3, dim: 2 })
        ));
        assert!(matches!(parse_field_expr("x0", 2), Err(Error::VariableOutOfRange { .. })));
    }

    #[test]
    fn direction_symbols_only_in_direction_mode() {
        assert!(parse_field_expr("g1", 2).is_err());
        assert!(parse_field_expr("m", 2).is_err());
        let e = parse_direction_expr("g1 - (p1*x1 + p2*x2)/m * p1", 2).unwrap();
        assert!(e.uses_direction_symbols());
        let env = Env {
            x: &[1.0, 1.0],
            g: Some(&[3.0, 1.0]),
            p: Some(&[1.0, 1.0]),
            m: Some(2.0),
        };
        assert_eq!(e.eval(&env).unwrap(), 2.0);
        assert!(e.eval(&Env::point(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn evaluation_errors() {
        let env = Env::point(&[1.0, 0.0]);
        assert!(parse_field_expr("log(x2)", 2).unwrap().eval(&env).is_err());
        assert!(parse_field_expr("1/x2", 2).unwrap().eval(&env).is_err());
        assert!(parse_field_expr("sqrt(-x1)", 2).unwrap().eval(&env).is_err());
        assert!(parse_field_expr("(-x1)^0.5", 2).unwrap().eval(&env).is_err());
    }

    #[test]
    fn display_reparses() {
        for text in ["x1^2 + exp(-x2)", "-(x1 - 3)*2/x2", "2^-x1", "sqrt(x1)/log(1+x2)"] {
            let e = parse_field_expr(text, 2).unwrap();
            let again = parse_field_expr(&e.to_string(), 2).unwrap();
            assert_eq!(e, again, "{text}");
        }
    }
}
