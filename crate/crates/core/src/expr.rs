//! Closed-form expressions in `x` and `t`.
//!
//! Grammar: numbers, `x`, `t`, `pi`, `+ - * / ^`, parentheses, unary minus and
//! the functions `sin`, `cos`, `exp`. `^` binds tighter than unary minus and
//! is right associative.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    T,
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            source,
        };
        let root = p.sum()?;
        if p.pos != p.tokens.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        eval(&self.root, x, t)
    }

    /// True when the expression does not mention `t`.
    pub fn is_time_independent(&self) -> bool {
        !mentions_t(&self.root)
    }

    /// Constant value when the expression mentions neither `x` nor `t`.
    pub fn as_constant(&self) -> Option<f64> {
        if mentions_var(&self.root) {
            None
        } else {
            Some(self.eval(0.0, 0.0))
        }
    }
}

fn eval(n: &Node, x: f64, t: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::X => x,
        Node::T => t,
        Node::Neg(a) => -eval(a, x, t),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x, t), eval(b, x, t));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => {
                    if b.fract() == 0.0 && b.abs() <= 64.0 {
                        a.powi(b as i32)
                    } else {
                        a.powf(b)
                    }
                }
            }
        }
        Node::Call(f, a) => {
            let a = eval(a, x, t);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
            }
        }
    }
}

fn mentions_t(n: &Node) -> bool {
    match n {
        Node::T => true,
        Node::Num(_) | Node::X => false,
        Node::Neg(a) | Node::Call(_, a) => mentions_t(a),
        Node::Bin(_, a, b) => mentions_t(a) || mentions_t(b),
    }
}

fn mentions_var(n: &Node) -> bool {
    match n {
        Node::T | Node::X => true,
        Node::Num(_) => false,
        Node::Neg(a) | Node::Call(_, a) => mentions_var(a),
        Node::Bin(_, a, b) => mentions_var(a) || mentions_var(b),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(s: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{text}' in expression '{s}'")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Sym(c));
            i += 1;
        } else {
            return Err(Error::Config(format!(
                "unexpected character '{c}' in expression '{s}'"
            )));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    source: &'a str,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Config(format!(
            "{msg} at token {} in expression '{}'",
            self.pos, self.source
        ))
    }

    fn peek_sym(&self, c: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Token::Sym(s)) if *s == c)
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        loop {
            let op = if self.peek_sym('+') {
                Op::Add
            } else if self.peek_sym('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.peek_sym('*') {
                Op::Mul
            } else if self.peek_sym('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_sym('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.peek_sym('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_sym('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| self.error("unexpected end of input"))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Node::Num(v)),
            Token::Sym('(') => {
                let inner = self.sum()?;
                if !self.peek_sym(')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Token::Ident(name) => match name.as_str() {
                "x" => Ok(Node::X),
                "t" => Ok(Node::T),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "sin" | "cos" | "exp" => {
                    let f = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        _ => Func::Exp,
                    };
                    if !self.peek_sym('(') {
                        return Err(self.error("expected '(' after function name"));
                    }
                    self.pos += 1;
                    let arg = self.sum()?;
                    if !self.peek_sym(')') {
                        return Err(self.error("expected ')'"));
                    }
                    self.pos += 1;
                    Ok(Node::Call(f, Box::new(arg)))
                }
                _ => Err(self.error(&format!("unknown identifier '{name}'"))),
            },
            Token::Sym(c) => Err(self.error(&format!("unexpected '{c}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(s: &str, x: f64, t: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, t)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, 0.0), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0), -4.0);
        assert_eq!(ev("x * (1 - x)", 0.5, 0.0), 0.25);
        assert_eq!(ev("1.5e-3 * t", 0.0, 2.0), 3e-3);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
    }

    #[test]
    fn functions() {
        assert!((ev("sin(pi*x)", 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(
            ev("exp(-pi^2*t)*sin(pi*x)", 0.3, 0.1),
            (-PI * PI * 0.1).exp() * (PI * 0.3).sin()
        );
        assert_eq!(ev("cos(0)", 0.0, 0.0), 1.0);
    }

    #[test]
    fn classification() {
        assert!(Expr::parse("sin(x)").unwrap().is_time_independent());
        assert!(!Expr::parse("t*x").unwrap().is_time_independent());
        assert_eq!(Expr::parse("-1").unwrap().as_constant(), Some(-1.0));
        assert_eq!(Expr::parse("x").unwrap().as_constant(), None);
    }

    #[test]
    fn malformed_input() {
        for bad in ["", "1 +", "sin x", "(1", "y", "1 $ 2", "2 3"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }
}
