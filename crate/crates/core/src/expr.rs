//! Expressions used by task writes, handler actions and gateway guards.
//!
//! ```text
//! expr  := or
//! or    := and ('||' and)*
//! and   := cmp ('&&' cmp)*
//! cmp   := add (('=='|'!='|'<'|'<='|'>'|'>=') add)?
//! add   := mul (('+'|'-') mul)*
//! mul   := unary (('*'|'/') unary)*
//! unary := '!' unary | atom
//! atom  := int | 'true' | 'false' | string | ident | '(' expr ')'
//! ```
//!
//! Integers are signed 64-bit with checked arithmetic. Strings compare with
//! `==`/`!=` and concatenate with `+`. There is no unary minus; write `0 - x`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Str(_) => "string",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("undefined variable `{0}`")]
    UndefinedVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at offset {offset}: {message}")]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Lit(Value),
    Var(String),
    Not(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
}

/// A parsed expression. Equality and serialization go through the source
/// text.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expr {
    source: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Eq for Expr {}

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

impl TryFrom<String> for Expr {
    type Error = SyntaxError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Expr::parse(&s)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.source
    }
}

/// Variable lookup for evaluation.
pub trait Env {
    fn lookup(&self, name: &str) -> Option<Value>;
}

impl Env for BTreeMap<String, Value> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.get(name).cloned()
    }
}

impl<F: Fn(&str) -> Option<Value>> Env for F {
    fn lookup(&self, name: &str) -> Option<Value> {
        self(name)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, SyntaxError> {
        let tokens = lex(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.or()?;
        if let Some((offset, tok)) = p.tokens.get(p.pos) {
            return Err(SyntaxError {
                offset: *offset,
                message: format!("unexpected {tok:?}"),
            });
        }
        Ok(Expr {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Every variable the expression mentions, whether or not evaluation
    /// reaches it.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        collect_vars(&self.root, &mut out);
        out
    }

    pub fn eval(&self, env: &dyn Env) -> Result<Value, EvalError> {
        eval(&self.root, env)
    }
}

pub fn eval_expr(expr: &Expr, env: &BTreeMap<String, Value>) -> Result<Value, EvalError> {
    expr.eval(env)
}

fn collect_vars(node: &Node, out: &mut BTreeSet<String>) {
    match node {
        Node::Lit(_) => {}
        Node::Var(v) => {
            out.insert(v.clone());
        }
        Node::Not(n) => collect_vars(n, out),
        Node::Bin(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

fn eval(node: &Node, env: &dyn Env) -> Result<Value, EvalError> {
    match node {
        Node::Lit(v) => Ok(v.clone()),
        Node::Var(name) => env
            .lookup(name)
            .ok_or_else(|| EvalError::UndefinedVariable(name.clone())),
        Node::Not(inner) => match eval(inner, env)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(EvalError::TypeMismatch(format!("`!` applied to {}", other.type_name()))),
        },
        Node::Bin(op @ (BinOp::And | BinOp::Or), a, b) => {
            let short = *op == BinOp::Or;
            match eval(a, env)? {
                Value::Bool(x) if x == short => Ok(Value::Bool(short)),
                Value::Bool(_) => match eval(b, env)? {
                    Value::Bool(y) => Ok(Value::Bool(y)),
                    other => Err(mismatch(*op, "bool", &other)),
                },
                other => Err(mismatch(*op, "bool", &other)),
            }
        }
        Node::Bin(op, a, b) => {
            let x = eval(a, env)?;
            let y = eval(b, env)?;
            binary(*op, x, y)
        }
    }
}

fn mismatch(op: BinOp, expected: &str, got: &Value) -> EvalError {
    EvalError::TypeMismatch(format!("{op:?} expects {expected}, got {}", got.type_name()))
}

fn binary(op: BinOp, x: Value, y: Value) -> Result<Value, EvalError> {
    use Value::*;
    Ok(match (op, x, y) {
        (BinOp::Eq, x, y) if x.type_name() == y.type_name() => Bool(x == y),
        (BinOp::Ne, x, y) if x.type_name() == y.type_name() => Bool(x != y),
        (BinOp::Lt, Int(a), Int(b)) => Bool(a < b),
        (BinOp::Le, Int(a), Int(b)) => Bool(a <= b),
        (BinOp::Gt, Int(a), Int(b)) => Bool(a > b),
        (BinOp::Ge, Int(a), Int(b)) => Bool(a >= b),
        (BinOp::Add, Int(a), Int(b)) => Int(a.checked_add(b).ok_or(EvalError::Overflow)?),
        (BinOp::Add, Str(a), Str(b)) => Str(a + &b),
        (BinOp::Sub, Int(a), Int(b)) => Int(a.checked_sub(b).ok_or(EvalError::Overflow)?),
        (BinOp::Mul, Int(a), Int(b)) => Int(a.checked_mul(b).ok_or(EvalError::Overflow)?),
        (BinOp::Div, Int(_), Int(0)) => return Err(EvalError::DivisionByZero),
        (BinOp::Div, Int(a), Int(b)) => Int(a.checked_div(b).ok_or(EvalError::Overflow)?),
        (op, x, y) => {
            return Err(EvalError::TypeMismatch(format!(
                "{op:?} is not defined for {} and {}",
                x.type_name(),
                y.type_name()
            )))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(i64),
    Str(String),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

const OPS: &[&str] = &["||", "&&", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "!"];

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, message: String| SyntaxError { offset, message };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n = src[start..i]
                .parse::<i64>()
                .map_err(|_| err(start, "integer literal out of range".into()))?;
            out.push((start, Tok::Int(n)));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if c == b'"' {
            i += 1;
            let mut s = String::new();
            loop {
                let Some(ch) = src[i..].chars().next() else {
                    return Err(err(start, "unterminated string literal".into()));
                };
                i += ch.len_utf8();
                match ch {
                    '"' => break,
                    '\\' => {
                        let Some(esc) = src[i..].chars().next() else {
                            return Err(err(start, "unterminated string literal".into()));
                        };
                        i += esc.len_utf8();
                        match esc {
                            '"' => s.push('"'),
                            '\\' => s.push('\\'),
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            other => return Err(err(i - 1, format!("unknown escape `\\{other}`"))),
                        }
                    }
                    other => s.push(other),
                }
            }
            out.push((start, Tok::Str(s)));
        } else if c == b'(' {
            i += 1;
            out.push((start, Tok::LParen));
        } else if c == b')' {
            i += 1;
            out.push((start, Tok::RParen));
        } else if let Some(op) = OPS.iter().find(|op| src[i..].starts_with(**op)) {
            i += op.len();
            out.push((start, Tok::Op(op)));
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(err(start, format!("unexpected character `{ch}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(o, _)| *o)
            .unwrap_or_else(|| self.tokens.last().map(|(o, _)| o + 1).unwrap_or(0))
    }

    fn eat_op(&mut self, ops: &[(&str, BinOp)]) -> Option<BinOp> {
        if let Some(Tok::Op(o)) = self.peek() {
            if let Some((_, op)) = ops.iter().find(|(s, _)| s == o) {
                self.pos += 1;
                return Some(*op);
            }
        }
        None
    }

    fn left_assoc(
        &mut self,
        ops: &[(&str, BinOp)],
        next: fn(&mut Parser) -> Result<Node, SyntaxError>,
    ) -> Result<Node, SyntaxError> {
        let mut lhs = next(self)?;
        while let Some(op) = self.eat_op(ops) {
            let rhs = next(self)?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Node, SyntaxError> {
        self.left_assoc(&[("||", BinOp::Or)], Parser::and)
    }

    fn and(&mut self) -> Result<Node, SyntaxError> {
        self.left_assoc(&[("&&", BinOp::And)], Parser::cmp)
    }

    fn cmp(&mut self) -> Result<Node, SyntaxError> {
        let lhs = self.add()?;
        let ops = [
            ("==", BinOp::Eq),
            ("!=", BinOp::Ne),
            ("<", BinOp::Lt),
            ("<=", BinOp::Le),
            (">", BinOp::Gt),
            (">=", BinOp::Ge),
        ];
        match self.eat_op(&ops) {
            Some(op) => {
                let rhs = self.add()?;
                Ok(Node::Bin(op, Box::new(lhs), Box::new(rhs)))
            }
            None => Ok(lhs),
        }
    }

    fn add(&mut self) -> Result<Node, SyntaxError> {
        self.left_assoc(&[("+", BinOp::Add), ("-", BinOp::Sub)], Parser::mul)
    }

    fn mul(&mut self) -> Result<Node, SyntaxError> {
        self.left_assoc(&[("*", BinOp::Mul), ("/", BinOp::Div)], Parser::unary)
    }

    fn unary(&mut self) -> Result<Node, SyntaxError> {
        if let Some(Tok::Op("!")) = self.peek() {
            self.pos += 1;
            return Ok(Node::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node, SyntaxError> {
        let offset = self.offset();
        let tok = self.peek().cloned().ok_or_else(|| SyntaxError {
            offset,
            message: "unexpected end of expression".into(),
        })?;
        self.pos += 1;
        Ok(match tok {
            Tok::Int(n) => Node::Lit(Value::Int(n)),
            Tok::Str(s) => Node::Lit(Value::Str(s)),
            Tok::Ident(id) if id == "true" => Node::Lit(Value::Bool(true)),
            Tok::Ident(id) if id == "false" => Node::Lit(Value::Bool(false)),
            Tok::Ident(id) => Node::Var(id),
            Tok::LParen => {
                let inner = self.or()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        inner
                    }
                    _ => {
                        return Err(SyntaxError {
                            offset: self.offset(),
                            message: "expected `)`".into(),
                        })
                    }
                }
            }
            other => {
                return Err(SyntaxError {
                    offset,
                    message: format!("unexpected {other:?}"),
                })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn ev(src: &str, e: &BTreeMap<String, Value>) -> Result<Value, EvalError> {
        eval_expr(&Expr::parse(src).unwrap(), e)
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2 * 3", &env(&[])), Ok(Value::Int(7)));
        assert_eq!(ev("(1 + 2) * 3", &env(&[])), Ok(Value::Int(9)));
        assert_eq!(ev("10 - 4 - 3", &env(&[])), Ok(Value::Int(3)));
        assert_eq!(ev("!false && 1 < 2 || false", &env(&[])), Ok(Value::Bool(true)));
    }

    #[test]
    fn budget_guard() {
        let e = env(&[
            ("price", Value::Int(90)),
            ("budget", Value::Int(100)),
            ("approved", Value::Bool(true)),
        ]);
        assert_eq!(ev("price <= budget && approved", &e), Ok(Value::Bool(true)));
    }

    #[test]
    fn errors() {
        let e = env(&[("x", Value::Int(1)), ("s", Value::Str("a".into()))]);
        assert_eq!(ev("x / 0", &e), Err(EvalError::DivisionByZero));
        assert_eq!(ev("9223372036854775807 + x", &e), Err(EvalError::Overflow));
        assert_eq!(ev("y + 1", &e), Err(EvalError::UndefinedVariable("y".into())));
        assert!(matches!(ev("s < s", &e), Err(EvalError::TypeMismatch(_))));
        assert!(matches!(ev("x == s", &e), Err(EvalError::TypeMismatch(_))));
        assert!(matches!(ev("x && true", &e), Err(EvalError::TypeMismatch(_))));
    }

    #[test]
    fn short_circuit_skips_undefined() {
        let e = env(&[]);
        assert_eq!(ev("false && missing", &e), Ok(Value::Bool(false)));
        assert_eq!(ev("true || missing", &e), Ok(Value::Bool(true)));
        assert!(ev("true && missing", &e).is_err());
    }

    #[test]
    fn strings() {
        let e = env(&[("id", Value::Str("ESC-1".into()))]);
        assert_eq!(ev(r#""wide;" + id"#, &e), Ok(Value::Str("wide;ESC-1".into())));
        assert_eq!(ev(r#"id != "x\"y""#, &e), Ok(Value::Bool(true)));
    }

    #[test]
    fn syntax_errors() {
        for bad in ["", "1 +", "(1", "1 2", "a == b == c", "\"open", "#"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
        assert_eq!(Expr::parse("1 +").unwrap_err().offset, 3);
    }

    #[test]
    fn variables_are_collected() {
        let e = Expr::parse("a + b * (c - a) > 0 && !flag").unwrap();
        let vars: Vec<String> = e.variables().into_iter().collect();
        assert_eq!(vars, ["a", "b", "c", "flag"]);
    }

    #[test]
    fn serde_goes_through_source_text() {
        let e: Expr = serde_json::from_str("\"x + 1\"").unwrap();
        assert_eq!(serde_json::to_string(&e).unwrap(), "\"x + 1\"");
        assert!(serde_json::from_str::<Expr>("\"x +\"").is_err());
        let v: Value = serde_json::from_str("42").unwrap();
        assert_eq!(v, Value::Int(42));
    }
}
