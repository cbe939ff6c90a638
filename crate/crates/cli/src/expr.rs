//! Arithmetic expressions over `x`, `y` for coefficient fields.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | primary ;
//! primary = number | "x" | "y" | "pi" | call | "(" expr ")" ;
//! call    = name "(" expr { "," expr } ")" ;
//! name    = "sin" | "cos" | "exp" | "ln" | "abs" | "min" | "max" | "pow" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }

    fn apply(self, a: &[f64]) -> f64 {
        match self {
            Func::Sin => a[0].sin(),
            Func::Cos => a[0].cos(),
            Func::Exp => a[0].exp(),
            Func::Ln => a[0].ln(),
            Func::Abs => a[0].abs(),
            Func::Min => a[0].min(a[1]),
            Func::Max => a[0].max(a[1]),
            Func::Pow => a[0].powf(a[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Y,
    Pi,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the expression text.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.message, self.offset)
    }
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Y => y,
            Expr::Pi => std::f64::consts::PI,
            Expr::Neg(a) => -a.eval(x, y),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y), b.eval(x, y));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Call(f, args) => {
                let vals: Vec<f64> = args.iter().map(|a| a.eval(x, y)).collect();
                f.apply(&vals)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => true,
            Expr::X | Expr::Y => false,
            Expr::Neg(a) => a.is_constant(),
            Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
            Expr::Call(_, args) => args.iter().all(Expr::is_constant),
        }
    }

    pub fn uses_y(&self) -> bool {
        match self {
            Expr::Y => true,
            Expr::Num(_) | Expr::X | Expr::Pi => false,
            Expr::Neg(a) => a.uses_y(),
            Expr::Bin(_, a, b) => a.uses_y() || b.uses_y(),
            Expr::Call(_, args) => args.iter().any(Expr::uses_y),
        }
    }

    /// Flags operations on constant subexpressions that can never be evaluated:
    /// `ln` of a nonpositive constant, division by a constant zero, `pow` of a
    /// negative constant to a non-integer constant power.
    pub fn check_domain(&self) -> Result<(), String> {
        match self {
            Expr::Num(_) | Expr::X | Expr::Y | Expr::Pi => Ok(()),
            Expr::Neg(a) => a.check_domain(),
            Expr::Bin(op, a, b) => {
                a.check_domain()?;
                b.check_domain()?;
                if *op == BinOp::Div && b.is_constant() && b.eval(0.0, 0.0) == 0.0 {
                    return Err(format!("division by the constant zero `{b}`"));
                }
                Ok(())
            }
            Expr::Call(f, args) => {
                for a in args {
                    a.check_domain()?;
                }
                match f {
                    Func::Ln if args[0].is_constant() && !(args[0].eval(0.0, 0.0) > 0.0) => {
                        Err(format!("ln of the nonpositive constant `{}`", args[0]))
                    }
                    Func::Pow if args[0].is_constant() && args[1].is_constant() => {
                        let (b, e) = (args[0].eval(0.0, 0.0), args[1].eval(0.0, 0.0));
                        if b < 0.0 && e.fract() != 0.0 {
                            Err(format!("pow of the negative constant `{}` to a fractional power", args[0]))
                        } else {
                            Ok(())
                        }
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized, with literals in shortest round-trip form, so that
    /// printing and re-parsing reproduces the tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::X => f.write_str("x"),
            Expr::Y => f.write_str("y"),
            Expr::Pi => f.write_str("pi"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { offset: self.pos, message: message.into() }
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

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                let open = self.pos;
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(ParseError { offset: open, message: "unclosed parenthesis".into() });
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.word(),
            Some(c) => Err(self.error(format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos > s
        };
        let mut any = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            any |= digits(self);
        }
        if !any {
            self.pos = start;
            return Err(self.error("malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !digits(self) {
                self.pos = mark;
                return Err(self.error("malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => Err(ParseError { offset: start, message: "malformed or out-of-range number".into() }),
        }
    }

    fn word(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match name {
            "x" => return Ok(Expr::X),
            "y" => return Ok(Expr::Y),
            "pi" => return Ok(Expr::Pi),
            _ => {}
        }
        let func = Func::from_name(name)
            .ok_or_else(|| ParseError { offset: start, message: format!("unknown name `{name}`") })?;
        if !self.eat(b'(') {
            return Err(self.error(format!("expected `(` after `{name}`")));
        }
        let open = self.pos - 1;
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(match self.peek() {
                None => ParseError { offset: open, message: "unclosed parenthesis".into() },
                Some(c) => self.error(format!("unexpected `{}` in argument list", c as char)),
            });
        }
        if args.len() != func.arity() {
            return Err(ParseError {
                offset: start,
                message: format!("`{name}` takes {} argument(s), got {}", func.arity(), args.len()),
            });
        }
        Ok(Expr::Call(func, args))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse("1 - 2 - 3").unwrap().eval(0.0, 0.0), -4.0);
        assert_eq!(parse("8 / 4 / 2").unwrap().eval(0.0, 0.0), 1.0);
        assert_eq!(parse("1 + 2 * 3").unwrap().eval(0.0, 0.0), 7.0);
        assert_eq!(parse("-2 * -3").unwrap().eval(0.0, 0.0), 6.0);
        assert_eq!(parse("--x").unwrap().eval(1.5, 0.0), 1.5);
        assert_eq!(parse("pow(x, 2) + max(y, 1)").unwrap().eval(3.0, 0.5), 10.0);
        assert_eq!(parse("2.5e-1 + .5 + 1.").unwrap().eval(0.0, 0.0), 1.75);
    }

    #[test]
    fn error_positions() {
        let e = parse("sin(pi*x").unwrap_err();
        assert_eq!((e.offset, e.message.as_str()), (3, "unclosed parenthesis"));
        assert_eq!(parse("(1 + 2").unwrap_err().offset, 0);
        assert_eq!(parse("1 + ").unwrap_err().message, "unexpected end of expression");
        assert_eq!(parse("foo(1)").unwrap_err().offset, 0);
        assert_eq!(parse("x y").unwrap_err().offset, 2);
        assert!(parse("min(1)").unwrap_err().message.contains("2 argument"));
        assert!(parse("1e").is_err());
    }

    #[test]
    fn domain_checks() {
        assert!(parse("ln(-1)").unwrap().check_domain().is_err());
        assert!(parse("ln(0)").unwrap().check_domain().is_err());
        assert!(parse("ln(x)").unwrap().check_domain().is_ok());
        assert!(parse("1/(2-2)").unwrap().check_domain().is_err());
        assert!(parse("pow(-2, 0.5)").unwrap().check_domain().is_err());
        assert!(parse("pow(-2, 2)").unwrap().check_domain().is_ok());
    }

    #[test]
    fn display_round_trips() {
        for text in ["-x * y + 1e-7", "sin(pi * x) / (1 + exp(-y))", "min(abs(x - 0.5), 0.25)", "--3"] {
            let e = parse(text).unwrap();
            assert_eq!(parse(&e.to_string()).unwrap(), e);
        }
    }
}
