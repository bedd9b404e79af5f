//! Tiny arithmetic expression grammar for custom scenario coefficients.
//!
//! Grammar (infix, usual precedence, `^` binds tightest and associates
//! right):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | primary
//! primary:= number | 'pi' | 't' | 'x' | 'y' | 'u'
//!         | ('sin'|'cos'|'exp'|'tanh') '(' expr ')'
//!         | 'pow' '(' expr ',' expr ')'
//!         | '(' expr ')'
//! ```
//!
//! The variable `u` is only meaningful where a nonlinearity is expected;
//! coefficient expressions that reference it are rejected by the caller.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    Y,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, t: f64, x: f64, y: f64, u: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Var(Var::U) => u,
            Expr::Neg(e) => -e.eval(t, x, y, u),
            Expr::Add(a, b) => a.eval(t, x, y, u) + b.eval(t, x, y, u),
            Expr::Sub(a, b) => a.eval(t, x, y, u) - b.eval(t, x, y, u),
            Expr::Mul(a, b) => a.eval(t, x, y, u) * b.eval(t, x, y, u),
            Expr::Div(a, b) => a.eval(t, x, y, u) / b.eval(t, x, y, u),
            Expr::Pow(a, b) => a.eval(t, x, y, u).powf(b.eval(t, x, y, u)),
            Expr::Call(f, e) => {
                let v = e.eval(t, x, y, u);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Tanh => v.tanh(),
                }
            }
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses(var),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.uses(var) || b.uses(var),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: &str) -> Error {
        Error::Config(format!("expression parse error at byte {}: {msg}", self.pos))
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut node = self.term()?;
        loop {
            if self.eat(b'+') {
                node = Expr::Add(Box::new(node), Box::new(self.term()?));
            } else if self.eat(b'-') {
                node = Expr::Sub(Box::new(node), Box::new(self.term()?));
            } else {
                return Ok(node);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut node = self.factor()?;
        loop {
            if self.eat(b'*') {
                node = Expr::Mul(Box::new(node), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                node = Expr::Div(Box::new(node), Box::new(self.factor()?));
            } else {
                return Ok(node);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.eat(b'^') {
            let exp = self.factor()?; // right associative
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.src.len() {
                    let b = self.src[self.pos];
                    if b.is_ascii_digit() || b == b'.' {
                        self.pos += 1;
                    } else if (b == b'e' || b == b'E')
                        && self.pos + 1 < self.src.len()
                        && (self.src[self.pos + 1].is_ascii_digit()
                            || self.src[self.pos + 1] == b'-'
                            || self.src[self.pos + 1] == b'+')
                    {
                        self.pos += 2;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                text.parse::<f64>()
                    .map(Expr::Num)
                    .map_err(|_| self.error(&format!("bad number '{text}'")))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.ident();
                match name.as_str() {
                    "t" => Ok(Expr::Var(Var::T)),
                    "x" => Ok(Expr::Var(Var::X)),
                    "y" => Ok(Expr::Var(Var::Y)),
                    "u" => Ok(Expr::Var(Var::U)),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "sin" | "cos" | "exp" | "tanh" => {
                        let f = match name.as_str() {
                            "sin" => Func::Sin,
                            "cos" => Func::Cos,
                            "exp" => Func::Exp,
                            _ => Func::Tanh,
                        };
                        self.expect(b'(')?;
                        let arg = self.expr()?;
                        self.expect(b')')?;
                        Ok(Expr::Call(f, Box::new(arg)))
                    }
                    "pow" => {
                        self.expect(b'(')?;
                        let base = self.expr()?;
                        self.expect(b',')?;
                        let exp = self.expr()?;
                        self.expect(b')')?;
                        Ok(Expr::Pow(Box::new(base), Box::new(exp)))
                    }
                    other => Err(self.error(&format!("unknown identifier '{other}'"))),
                }
            }
            Some(c) => Err(self.error(&format!("unexpected '{}'", c as char))),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}
