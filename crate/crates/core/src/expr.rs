//! Small analytic-expression language.
//!
//! Grammar (lowest to highest precedence): `+ -` (left), `* /` (left),
//! unary `-`, `^` (right, constant exponent), primaries: numbers, `pi`,
//! declared variables, `sin(..)`, `cos(..)`, `exp(..)`, parentheses.
//!
//! Parsed expressions compile to a postfix tape that evaluates over any
//! [`Num`] type.

use std::fmt;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::num::Num;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

/// Expression tree. Variables are indices into the declared variable list.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Pi,
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    /// Base raised to a constant exponent; the exponent subtree is kept for printing.
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn has_vars(&self) -> bool {
        match self {
            Node::Num(_) | Node::Pi => false,
            Node::Var(_) => true,
            Node::Neg(a) | Node::Call(_, a) => a.has_vars(),
            Node::Bin(_, a, b) | Node::Pow(a, b) => a.has_vars() || b.has_vars(),
        }
    }

    fn contains_div(&self) -> bool {
        match self {
            Node::Num(_) | Node::Pi | Node::Var(_) => false,
            Node::Bin(BinOp::Div, _, _) => true,
            Node::Neg(a) | Node::Call(_, a) => a.contains_div(),
            Node::Bin(_, a, b) | Node::Pow(a, b) => a.contains_div() || b.contains_div(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(f64),
    Sin,
    Cos,
    Exp,
}

/// A parsed, compiled expression.
#[derive(Clone, Debug)]
pub struct Expr {
    text: String,
    vars: Vec<String>,
    root: Node,
    tape: Vec<Op>,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.root == other.root
    }
}

impl Expr {
    pub fn parse(text: &str, vars: &[&str]) -> Result<Self> {
        let vars: Vec<String> = vars.iter().map(|v| v.to_string()).collect();
        let root = Parser::new(text, &vars).parse()?;
        let mut tape = Vec::new();
        compile(&root, &mut tape)?;
        Ok(Self { text: text.to_string(), vars, root, tape })
    }

    /// The source text this expression was parsed from.
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn contains_division(&self) -> bool {
        self.root.contains_div()
    }

    /// Evaluates with `args[i]` bound to the i-th declared variable.
    ///
    /// `like` fixes the shape of constants (series order, dual nesting).
    pub fn eval<T: Num>(&self, args: &[T], like: &T) -> Result<T> {
        if args.len() != self.vars.len() {
            return Err(Error::Unbound(format!(
                "expected {} arguments, got {}",
                self.vars.len(),
                args.len()
            )));
        }
        let mut stack: SmallVec<[T; 16]> = SmallVec::new();
        for op in &self.tape {
            let v = match op {
                Op::Const(c) => like.lift(*c),
                Op::Var(i) => args[*i].clone(),
                Op::Neg => stack.pop().expect("tape underflow").neg(),
                Op::Sin => stack.pop().expect("tape underflow").sin(),
                Op::Cos => stack.pop().expect("tape underflow").cos(),
                Op::Exp => stack.pop().expect("tape underflow").exp(),
                Op::Pow(p) => stack.pop().expect("tape underflow").powf(*p)?,
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack.pop().expect("tape underflow");
                    let a = stack.pop().expect("tape underflow");
                    match op {
                        Op::Add => a.add(&b),
                        Op::Sub => a.sub(&b),
                        Op::Mul => a.mul(&b),
                        _ => a.div(&b)?,
                    }
                }
            };
            stack.push(v);
        }
        let out = stack.pop().expect("tape produces one value");
        if !out.is_finite() {
            return Err(Error::NonFiniteEval("expression value"));
        }
        Ok(out)
    }

    /// Evaluates with variables bound by name.
    pub fn eval_named(&self, env: &[(&str, f64)]) -> Result<f64> {
        let args = self
            .vars
            .iter()
            .map(|name| {
                env.iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::Unbound(name.clone()))
            })
            .collect::<Result<Vec<f64>>>()?;
        self.eval(&args, &0.0)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized form that re-parses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.vars, f)
    }
}

fn write_node(n: &Node, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Num(v) => write!(f, "{v:?}"),
        Node::Pi => write!(f, "pi"),
        Node::Var(i) => write!(f, "{}", vars[*i]),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            write!(f, "(")?;
            write_node(a, vars, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, vars, f)?;
            write!(f, ")")
        }
        Node::Pow(a, b) => {
            write!(f, "(")?;
            write_node(a, vars, f)?;
            write!(f, ")^(")?;
            write_node(b, vars, f)?;
            write!(f, ")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
    }
}

fn const_value(n: &Node) -> Result<f64> {
    let tape = {
        let mut t = Vec::new();
        compile(n, &mut t)?;
        t
    };
    let e = Expr { text: String::new(), vars: Vec::new(), root: n.clone(), tape };
    e.eval::<f64>(&[], &0.0)
}

fn compile(n: &Node, out: &mut Vec<Op>) -> Result<()> {
    match n {
        Node::Num(v) => out.push(Op::Const(*v)),
        Node::Pi => out.push(Op::Const(std::f64::consts::PI)),
        Node::Var(i) => out.push(Op::Var(*i)),
        Node::Neg(a) => {
            compile(a, out)?;
            out.push(Op::Neg);
        }
        Node::Bin(op, a, b) => {
            compile(a, out)?;
            compile(b, out)?;
            out.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
            });
        }
        Node::Pow(a, b) => {
            compile(a, out)?;
            out.push(Op::Pow(const_value(b)?));
        }
        Node::Call(func, a) => {
            compile(a, out)?;
            out.push(match func {
                Func::Sin => Op::Sin,
                Func::Cos => Op::Cos,
                Func::Exp => Op::Exp,
            });
        }
    }
    Ok(())
}

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
    End,
}

struct Parser<'a> {
    src: &'a str,
    vars: &'a [String],
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, vars: &'a [String]) -> Self {
        Self { src, vars, pos: 0, tok: Tok::End, tok_start: 0 }
    }

    fn syntax(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Syntax { offset, msg: msg.into() }
    }

    fn advance(&mut self) -> Result<()> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            self.tok = t;
            return Ok(());
        }
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let mut p = self.pos + 1;
                if p < bytes.len() && (bytes[p] == b'+' || bytes[p] == b'-') {
                    p += 1;
                }
                if p < bytes.len() && bytes[p].is_ascii_digit() {
                    while p < bytes.len() && bytes[p].is_ascii_digit() {
                        p += 1;
                    }
                    self.pos = p;
                }
            }
            let text = &self.src[start..self.pos];
            let v: f64 = text
                .parse()
                .map_err(|_| self.syntax(start, format!("malformed number '{text}'")))?;
            self.tok = Tok::Num(v);
            return Ok(());
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
            return Ok(());
        }
        let ch = self.src[self.pos..].chars().next().unwrap_or('?');
        Err(self.syntax(self.pos, format!("unexpected character '{ch}'")))
    }

    fn parse(mut self) -> Result<Node> {
        if self.src.trim().is_empty() {
            return Err(self.syntax(0, "empty expression"));
        }
        self.advance()?;
        let n = self.sum()?;
        if self.tok != Tok::End {
            return Err(self.syntax(self.tok_start, "unexpected trailing input"));
        }
        Ok(n)
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.tok == Tok::Minus {
            self.advance()?;
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.tok != Tok::Caret {
            return Ok(base);
        }
        self.advance()?;
        let at = self.tok_start;
        // the exponent binds tighter than unary minus on the left, but may carry its own sign
        let exp = self.unary()?;
        if exp.has_vars() {
            return Err(self.syntax(at, "exponent must be a constant"));
        }
        let p = const_value(&exp).map_err(|_| self.syntax(at, "exponent does not evaluate"))?;
        if !p.is_finite() {
            return Err(self.syntax(at, "exponent is not finite"));
        }
        Ok(Node::Pow(Box::new(base), Box::new(exp)))
    }

    fn primary(&mut self) -> Result<Node> {
        let start = self.tok_start;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Node::Num(v))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.advance()?;
                if self.tok == Tok::LParen {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        _ => return Err(Error::UnknownFunction { name, offset: start }),
                    };
                    self.advance()?;
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Pi);
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(Error::UnknownIdentifier { name, offset: start }),
                }
            }
            Tok::End => Err(self.syntax(start, "unexpected end of input")),
            other => Err(self.syntax(start, format!("unexpected token {other:?}"))),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if self.tok != Tok::RParen {
            return Err(self.syntax(self.tok_start, "expected ')'"));
        }
        self.advance()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Dual;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn evaluates_examples() {
        let e = Expr::parse("sin(2*pi*th)", &["th"]).unwrap();
        assert!((e.eval_named(&[("th", 0.25)]).unwrap() - 1.0).abs() < 1e-15);
        let e = Expr::parse("u1 + (1 - u1^2)", &["u1"]).unwrap();
        assert_eq!(e.eval_named(&[("u1", 2.0)]).unwrap(), -1.0);
        let e = Expr::parse("u1*u2", &["u1", "u2"]).unwrap();
        assert_eq!(e.eval(&[3.0, 4.0], &0.0).unwrap(), 12.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let v = |s: &str| Expr::parse(s, &["x"]).unwrap().eval(&[3.0], &0.0).unwrap();
        assert_eq!(v("-x^2"), -9.0);
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("8/2/2"), 2.0);
        assert_eq!(v("8-2-2"), 4.0);
        assert_eq!(v("1+2*x"), 7.0);
        assert_eq!(v("-x*-x"), 9.0);
        assert_eq!(v("(1+x)^-1"), 0.25);
        assert_eq!(v("2e-1*10"), 2.0);
        assert_relative_eq!(v("(1+x)^(-1/2)"), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn reports_errors_with_offsets() {
        assert!(matches!(Expr::parse("cos(", &[]), Err(Error::Syntax { offset: 4, .. })));
        assert!(matches!(
            Expr::parse("1 + y", &["x"]),
            Err(Error::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            Expr::parse("tan(x)", &["x"]),
            Err(Error::UnknownFunction { offset: 0, .. })
        ));
        assert!(matches!(Expr::parse("x^x", &["x"]), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(Expr::parse("", &["x"]), Err(Error::Syntax { offset: 0, .. })));
        assert!(matches!(Expr::parse("1 2", &[]), Err(Error::Syntax { offset: 2, .. })));
        let e = Expr::parse("1/x", &["x"]).unwrap();
        assert!(matches!(e.eval(&[0.0], &0.0), Err(Error::DivisionByZero)));
        let e = Expr::parse("exp(x)", &["x"]).unwrap();
        assert!(matches!(e.eval(&[1e6], &0.0), Err(Error::NonFiniteEval(_))));
        assert!(matches!(e.eval_named(&[]), Err(Error::Unbound(_))));
    }

    #[test]
    fn dual_gradient_matches_differences() {
        let e = Expr::parse("exp(u1*u2)", &["u1", "u2"]).unwrap();
        let grad = |i: usize| {
            let args = [Dual::seeded(1.0, (i == 0) as u8 as f64), Dual::seeded(2.0, (i == 1) as u8 as f64)];
            e.eval(&args, &Dual::constant(0.0)).unwrap().d
        };
        let e2 = 2f64.exp();
        assert_relative_eq!(grad(0), 2.0 * e2, max_relative = 1e-15);
        assert_relative_eq!(grad(1), e2, max_relative = 1e-15);
        let h = 1e-6;
        let f = |a: f64, b: f64| e.eval(&[a, b], &0.0).unwrap();
        assert!(((f(1.0 + h, 2.0) - f(1.0 - h, 2.0)) / (2.0 * h) - grad(0)).abs() < 1e-8 * 2.0 * e2);
        assert!(((f(1.0, 2.0 + h) - f(1.0, 2.0 - h)) / (2.0 * h) - grad(1)).abs() < 1e-8 * 2.0 * e2);
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            Just("x".to_string()),
            Just("y".to_string()),
            Just("pi".to_string()),
            (0.1f64..3.0).prop_map(|v| format!("{v}")),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} - {b}")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} * {b}")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) / (2.5 + cos({b}))")),
                inner.clone().prop_map(|a| format!("-{a}")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                inner.clone().prop_map(|a| format!("exp(0.2*cos({a}))")),
                (inner.clone(), 0u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
                inner.prop_map(|a| format!("(2 + sin({a}))^(-1.5)")),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_reparses_identically(text in arb_expr()) {
            let e = Expr::parse(&text, &["x", "y"]).unwrap();
            let printed = e.to_string();
            let again = Expr::parse(&printed, &["x", "y"]).unwrap();
            prop_assert_eq!(&e, &again);
        }

        #[test]
        fn dual_agrees_with_central_differences(text in arb_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let e = Expr::parse(&text, &["x", "y"]).unwrap();
            let f = |a: f64, b: f64| e.eval(&[a, b], &0.0);
            if let (Ok(_), Ok(dx)) = (f(x, y), e.eval(&[Dual::seeded(x, 1.0), Dual::seeded(y, 0.0)], &Dual::constant(0.0))) {
                let h = 1e-6;
                if let (Ok(p), Ok(m)) = (f(x + h, y), f(x - h, y)) {
                    let fd = (p - m) / (2.0 * h);
                    let scale = 1.0 + dx.d.abs() + dx.v.abs();
                    // central differences carry O(h^2 f''') plus rounding O(eps/h)
                    prop_assert!((fd - dx.d).abs() <= 1e-7 * scale * (1.0 + dx.v.abs().max(1.0).powi(2)),
                        "{} fd {} dual {}", text, fd, dx.d);
                }
            }
        }
    }
}
