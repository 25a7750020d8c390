//! Micro-expression language for custom dynamics and rewards.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! var     := ('x' | 'a' | 'w') '_' index
//! func    := 'min' | 'max' | 'pos'
//! ```
//!
//! Whitespace is ignored and binary operators associate to the left.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("expression error at byte {pos}: {msg}")]
pub struct ExprError {
    pub pos: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    State,
    Action,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(VarKind, usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    Pos(Box<Expr>),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { src: text.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64], a: &[f64], w: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(VarKind::State, i) => x[*i],
            Expr::Var(VarKind::Action, i) => a[*i],
            Expr::Var(VarKind::Noise, i) => w[*i],
            Expr::Neg(e) => -e.eval(x, a, w),
            Expr::Add(l, r) => l.eval(x, a, w) + r.eval(x, a, w),
            Expr::Sub(l, r) => l.eval(x, a, w) - r.eval(x, a, w),
            Expr::Mul(l, r) => l.eval(x, a, w) * r.eval(x, a, w),
            Expr::Div(l, r) => l.eval(x, a, w) / r.eval(x, a, w),
            Expr::Min(args) => args.iter().map(|e| e.eval(x, a, w)).fold(f64::INFINITY, f64::min),
            Expr::Max(args) => args.iter().map(|e| e.eval(x, a, w)).fold(f64::NEG_INFINITY, f64::max),
            Expr::Pos(e) => e.eval(x, a, w).max(0.0),
        }
    }

    /// Largest index used for each variable kind, if any.
    pub fn max_index(&self, kind: VarKind) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(k, i) => (*k == kind).then_some(*i),
            Expr::Neg(e) | Expr::Pos(e) => e.max_index(kind),
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                l.max_index(kind).max(r.max_index(kind))
            }
            Expr::Min(args) | Expr::Max(args) => args.iter().filter_map(|e| e.max_index(kind)).max(),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError { pos: self.pos, msg: msg.to_string() }
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

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.word(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(Expr::Num).map_err(|_| ExprError { pos: start, msg: format!("bad number '{text}'") })
    }

    fn word(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match word {
            "min" | "max" | "pos" => {
                self.expect(b'(')?;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(b',') {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(b')')?;
                match word {
                    "pos" if args.len() == 1 => Ok(Expr::Pos(Box::new(args.pop().unwrap()))),
                    "pos" => Err(ExprError { pos: start, msg: "pos takes one argument".into() }),
                    "min" => Ok(Expr::Min(args)),
                    _ => Ok(Expr::Max(args)),
                }
            }
            _ => {
                let (kind, rest) = match word.split_once('_') {
                    Some(("x", r)) => (VarKind::State, r),
                    Some(("a", r)) => (VarKind::Action, r),
                    Some(("w", r)) => (VarKind::Noise, r),
                    _ => return Err(ExprError { pos: start, msg: format!("unknown identifier '{word}'") }),
                };
                rest.parse::<usize>()
                    .map(|i| Expr::Var(kind, i))
                    .map_err(|_| ExprError { pos: start, msg: format!("bad variable index in '{word}'") })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str) -> f64 {
        Expr::parse(s).unwrap().eval(&[3.0, 4.0], &[2.0], &[1.2])
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1 + 2 * 3"), 7.0);
        assert_eq!(ev("(1 + 2) * 3"), 9.0);
        assert_eq!(ev("8 - 3 - 2"), 3.0);
        assert_eq!(ev("8 / 4 / 2"), 1.0);
        assert_eq!(ev("-x_0 + 1"), -2.0);
        assert_eq!(ev("2e-1*10"), 2.0);
    }

    #[test]
    fn variables_and_functions() {
        assert!((ev("pos(x_0 + 1/a_0 - w_0)") - 2.3).abs() < 1e-12);
        assert_eq!(ev("pos(w_0 - x_1)"), 0.0);
        assert_eq!(ev("min(x_0, x_1, 1)"), 1.0);
        assert_eq!(ev("max( x_0 ,x_1 )"), 4.0);
        assert!((ev("max(a_0 - w_0, w_0 - a_0)") - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["", "1 +", "x", "y_0", "pos(1,2)", "(1", "1 2", "x_a", "min()"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn index_bounds() {
        let e = Expr::parse("x_0 + w_2 * a_1 - x_3").unwrap();
        assert_eq!(e.max_index(VarKind::State), Some(3));
        assert_eq!(e.max_index(VarKind::Noise), Some(2));
        assert_eq!(e.max_index(VarKind::Action), Some(1));
    }
}
