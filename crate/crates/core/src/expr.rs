//! A small exact expression language for approximating functions and radii.
//!
//! Grammar (whitespace ignored, `q` and `n` both name the index variable):
//!
//! ```text
//! source  := expr (':' name '=' value (',' name '=' value)*)?
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary | unary)*      juxtaposition multiplies
//! unary   := '-' unary | power
//! power   := atom ('^' '-'? atom)?                   exponent must be an integer
//! atom    := number | name | call | '(' expr ')'
//! call    := 'indicator' '(' 'primes' ')'
//!          | 'restrict' '(' ('q'|'n') ('≡' | '=' | '==') expr 'mod' expr ')'
//! ```
//!
//! Numbers may be integers or finite decimals; every value is an exact rational.
//! Examples: `c/q:c=1`, `1/(4n)`, `n^-2`, `c/q^s:c=1/2,s=2`,
//! `1/(2q)*restrict(q≡1 mod 3)`.

use std::collections::HashMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{LabError, Result};
use crate::numtheory::is_prime;
use crate::rational::{parse_rational, Rational};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(Rational),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Primes,
    Restrict { s: Box<Node>, u: Box<Node> },
}

/// A parsed expression in one index variable with all parameters bound.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Rational),
    Ident(String),
    Op(char),
}

fn perr<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Parse(msg.into()))
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(parse_decimal(&text)?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if c == '=' && chars.get(i + 1) == Some(&'=') {
            out.push(Tok::Op('≡'));
            i += 2;
        } else if "+-*/^()=≡,".contains(c) {
            out.push(Tok::Op(if c == '=' { '≡' } else { c }));
            i += 1;
        } else {
            return perr(format!("unexpected character {c:?} in expression {s:?}"));
        }
    }
    Ok(out)
}

fn parse_decimal(text: &str) -> Result<Rational> {
    match text.split_once('.') {
        None => parse_rational(text),
        Some((int, frac)) => {
            if frac.contains('.') {
                return perr(format!("malformed number {text:?}"));
            }
            let digits = format!("{int}{frac}");
            let num: BigInt = digits.parse().map_err(|_| LabError::Parse(format!("malformed number {text:?}")))?;
            let den = BigInt::from(10u32).pow(frac.len() as u32);
            Ok(Rational::new(num, den))
        }
    }
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    bindings: &'a HashMap<String, Rational>,
    source: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            perr(format!("expected {op:?} in {:?}", self.source))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn starts_atom(&self) -> bool {
        match self.peek() {
            Some(Tok::Num(_)) | Some(Tok::Op('(')) => true,
            Some(Tok::Ident(s)) => s != "mod",
            _ => false,
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else if self.starts_atom() {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.power()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = if self.eat('-') { Node::Neg(Box::new(self.atom()?)) } else { self.atom()? };
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Const(v)),
            Some(Tok::Op('(')) => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.ident(name),
            Some(t) => perr(format!("unexpected token {t:?} in {:?}", self.source)),
            None => perr(format!("unexpected end of expression {:?}", self.source)),
        }
    }

    fn ident(&mut self, name: String) -> Result<Node> {
        match name.as_str() {
            "q" | "n" => Ok(Node::Var),
            "indicator" => {
                self.expect('(')?;
                match self.next() {
                    Some(Tok::Ident(s)) if s == "primes" => {}
                    _ => return perr(format!("indicator() only accepts 'primes' in {:?}", self.source)),
                }
                self.expect(')')?;
                Ok(Node::Primes)
            }
            "restrict" => {
                self.expect('(')?;
                match self.next() {
                    Some(Tok::Ident(v)) if v == "q" || v == "n" => {}
                    _ => return perr(format!("restrict() must start with the index variable in {:?}", self.source)),
                }
                self.expect('≡')?;
                let s = self.expr()?;
                match self.next() {
                    Some(Tok::Ident(m)) if m == "mod" => {}
                    _ => return perr(format!("restrict() is missing 'mod' in {:?}", self.source)),
                }
                let u = self.expr()?;
                self.expect(')')?;
                Ok(Node::Restrict { s: Box::new(s), u: Box::new(u) })
            }
            _ => match self.bindings.get(&name) {
                Some(v) => Ok(Node::Const(v.clone())),
                None => perr(format!("unbound name {name:?} in {:?}", self.source)),
            },
        }
    }
}

fn as_integer(v: &Rational, what: &str) -> Result<BigInt> {
    if !v.is_integer() {
        return Err(LabError::InvalidArgument(format!("{what} must be an integer")));
    }
    Ok(v.to_integer())
}

fn eval(node: &Node, x: &Rational) -> Result<Rational> {
    Ok(match node {
        Node::Const(v) => v.clone(),
        Node::Var => x.clone(),
        Node::Neg(a) => -eval(a, x)?,
        Node::Add(a, b) => eval(a, x)? + eval(b, x)?,
        Node::Sub(a, b) => eval(a, x)? - eval(b, x)?,
        Node::Mul(a, b) => {
            let l = eval(a, x)?;
            if l.is_zero() {
                return Ok(l);
            }
            l * eval(b, x)?
        }
        Node::Div(a, b) => {
            let d = eval(b, x)?;
            if d.is_zero() {
                return Err(LabError::InvalidArgument("division by zero in expression".into()));
            }
            eval(a, x)? / d
        }
        Node::Pow(a, b) => {
            let base = eval(a, x)?;
            let e = as_integer(&eval(b, x)?, "exponent")?
                .to_i32()
                .ok_or_else(|| LabError::InvalidArgument("exponent out of range".into()))?;
            if e < 0 && base.is_zero() {
                return Err(LabError::InvalidArgument("zero raised to a negative power".into()));
            }
            num_traits::pow::Pow::pow(&base, e)
        }
        Node::Primes => {
            let q = as_integer(x, "index")?.to_u64();
            Rational::from_integer(BigInt::from(matches!(q, Some(q) if is_prime(q)) as u8))
        }
        Node::Restrict { s, u } => {
            let q = as_integer(x, "index")?;
            let s = as_integer(&eval(s, x)?, "residue")?;
            let u = as_integer(&eval(u, x)?, "modulus")?;
            if !u.is_positive() {
                return Err(LabError::InvalidArgument("restrict modulus must be positive".into()));
            }
            let hit = (q - s).mod_floor(&u).is_zero();
            Rational::from_integer(BigInt::from(hit as u8))
        }
    })
}

impl Expr {
    /// Parses `expr[:name=value,...]`.
    pub fn parse(source: &str) -> Result<Self> {
        let (body, binds) = match source.split_once(':') {
            Some((b, rest)) => (b, Some(rest)),
            None => (source, None),
        };
        let mut bindings = HashMap::new();
        if let Some(rest) = binds {
            for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let Some((k, v)) = item.split_once('=') else {
                    return perr(format!("binding {item:?} is not of the form name=value"));
                };
                let k = k.trim();
                if k == "q" || k == "n" || k.is_empty() || !k.chars().all(|c| c.is_alphanumeric() || c == '_') {
                    return perr(format!("invalid binding name {k:?}"));
                }
                let v = v.trim();
                let val = if v.contains('.') { parse_decimal(v)? } else { parse_rational(v)? };
                bindings.insert(k.to_string(), val);
            }
        }
        let toks = tokenize(body)?;
        if toks.is_empty() {
            return perr("empty expression");
        }
        let mut p = Parser { toks, pos: 0, bindings: &bindings, source };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return perr(format!("trailing input after position {} in {source:?}", p.pos));
        }
        Ok(Self { source: source.to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: &Rational) -> Result<Rational> {
        eval(&self.root, x)
    }

    pub fn eval_at(&self, q: u64) -> Result<Rational> {
        self.eval(&Rational::from_integer(q.into()))
    }

    /// `true` when the expression does not depend on the index variable.
    pub fn is_constant(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Const(_) => true,
                Node::Var | Node::Primes | Node::Restrict { .. } => false,
                Node::Neg(a) => walk(a),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a) && walk(b)
                }
            }
        }
        walk(&self.root)
    }
}

impl std::str::FromStr for Expr {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn ev(s: &str, q: u64) -> Rational {
        Expr::parse(s).unwrap().eval_at(q).unwrap()
    }

    #[test]
    fn basic_forms() {
        assert_eq!(ev("c/q:c=1", 4), rat(1, 4));
        assert_eq!(ev("1/(4n)", 5), rat(1, 20));
        assert_eq!(ev("n^-2", 3), rat(1, 9));
        assert_eq!(ev("c/q^s:c=1/2,s=2", 3), rat(1, 18));
        assert_eq!(ev("1/(2q)", 7), rat(1, 14));
        assert_eq!(ev("2q^2 - q + 1", 3), rat(16, 1));
        assert_eq!(ev("-q^2", 3), rat(-9, 1));
        assert_eq!(ev("0.25", 9), rat(1, 4));
        assert_eq!(ev("1/2", 9), rat(1, 2));
    }

    #[test]
    fn indicators() {
        assert_eq!(ev("c*indicator(primes):c=3", 7), rat(3, 1));
        assert_eq!(ev("c*indicator(primes):c=3", 8), rat(0, 1));
        assert_eq!(ev("1/(2q)*restrict(q≡1 mod 3)", 4), rat(1, 8));
        assert_eq!(ev("1/(2q)*restrict(q==1 mod 3)", 5), rat(0, 1));
        assert_eq!(ev("restrict(q≡-1 mod 3)", 5), rat(1, 1));
    }

    #[test]
    fn errors() {
        assert!(Expr::parse("c/q").is_err());
        assert!(Expr::parse("1/(q").is_err());
        assert!(Expr::parse("q $ 2").is_err());
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("q^(1/2)").unwrap().eval_at(4).is_err());
        assert!(Expr::parse("1/(q-2)").unwrap().eval_at(2).is_err());
        assert!(Expr::parse("indicator(odds)").is_err());
    }

    #[test]
    fn constant_detection() {
        assert!(Expr::parse("1/2").unwrap().is_constant());
        assert!(!Expr::parse("1/q").unwrap().is_constant());
    }
}
