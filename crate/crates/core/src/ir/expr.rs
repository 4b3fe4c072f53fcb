//! Scalar value expressions used in tasklet bodies, assignment guards, and
//! inter-state conditions.
//!
//! The grammar extends the integer expression grammar of [`crate::symbolic`]
//! with float literals, comparisons and boolean connectives (evaluating to
//! integer 0/1), a `select(cond, a, b)` primitive, vector lane access
//! `lane(v, i)` and construction `pack(a, b, ...)`, and lookups into embedded
//! constant tables written `table[i, j]`.
//!
//! `/` keeps floor-division semantics on integers and is true division on
//! floats.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueExpr {
    Int(i128),
    Float(f64),
    /// Connector, map parameter, or symbol reference.
    Ref(String),
    Bin(BinOp, Box<ValueExpr>, Box<ValueExpr>),
    Neg(Box<ValueExpr>),
    /// Comparison producing integer 0 or 1.
    Cmp(CmpOp, Box<ValueExpr>, Box<ValueExpr>),
    Not(Box<ValueExpr>),
    And(Box<ValueExpr>, Box<ValueExpr>),
    Or(Box<ValueExpr>, Box<ValueExpr>),
    /// `select(cond, a, b)`: `a` if `cond` is non-zero, else `b`.
    Select(Box<ValueExpr>, Box<ValueExpr>, Box<ValueExpr>),
    /// `lane(v, i)`: scalar lane `i` of a vector value.
    Lane(Box<ValueExpr>, Box<ValueExpr>),
    /// `pack(a0, .., aW-1)`: builds a vector value from scalar lanes.
    Pack(Vec<ValueExpr>),
    /// Lookup into an embedded constant table: `name[i, j, ..]`.
    ConstRef(String, Vec<ValueExpr>),
}

impl ValueExpr {
    pub fn int(v: i128) -> ValueExpr {
        ValueExpr::Int(v)
    }

    pub fn float(v: f64) -> ValueExpr {
        ValueExpr::Float(v)
    }

    pub fn var(name: impl Into<String>) -> ValueExpr {
        ValueExpr::Ref(name.into())
    }

    pub fn bin(op: BinOp, lhs: ValueExpr, rhs: ValueExpr) -> ValueExpr {
        ValueExpr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn add(lhs: ValueExpr, rhs: ValueExpr) -> ValueExpr {
        ValueExpr::bin(BinOp::Add, lhs, rhs)
    }

    pub fn mul(lhs: ValueExpr, rhs: ValueExpr) -> ValueExpr {
        ValueExpr::bin(BinOp::Mul, lhs, rhs)
    }

    pub fn cmp(op: CmpOp, lhs: ValueExpr, rhs: ValueExpr) -> ValueExpr {
        ValueExpr::Cmp(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn select(cond: ValueExpr, then: ValueExpr, otherwise: ValueExpr) -> ValueExpr {
        ValueExpr::Select(Box::new(cond), Box::new(then), Box::new(otherwise))
    }

    pub fn lane(vector: ValueExpr, index: ValueExpr) -> ValueExpr {
        ValueExpr::Lane(Box::new(vector), Box::new(index))
    }

    /// All bare references in the expression (excluding constant-table names).
    pub fn refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let ValueExpr::Ref(name) = e {
                out.push(name.as_str());
            }
        });
        out
    }

    /// All constant-table names referenced.
    pub fn const_refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let ValueExpr::ConstRef(name, _) = e {
                out.push(name.as_str());
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a ValueExpr)) {
        f(self);
        match self {
            ValueExpr::Int(_) | ValueExpr::Float(_) | ValueExpr::Ref(_) => {}
            ValueExpr::Bin(_, a, b)
            | ValueExpr::Cmp(_, a, b)
            | ValueExpr::And(a, b)
            | ValueExpr::Or(a, b)
            | ValueExpr::Lane(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            ValueExpr::Neg(a) | ValueExpr::Not(a) => a.visit(f),
            ValueExpr::Select(c, a, b) => {
                c.visit(f);
                a.visit(f);
                b.visit(f);
            }
            ValueExpr::Pack(items) => {
                for item in items {
                    item.visit(f);
                }
            }
            ValueExpr::ConstRef(_, idx) => {
                for item in idx {
                    item.visit(f);
                }
            }
        }
    }

    /// Renames bare references according to `f` (identity when `f` yields None).
    pub fn map_refs(&self, f: &impl Fn(&str) -> Option<ValueExpr>) -> ValueExpr {
        match self {
            ValueExpr::Ref(name) => f(name).unwrap_or_else(|| self.clone()),
            ValueExpr::Int(_) | ValueExpr::Float(_) => self.clone(),
            ValueExpr::Bin(op, a, b) => {
                ValueExpr::Bin(*op, Box::new(a.map_refs(f)), Box::new(b.map_refs(f)))
            }
            ValueExpr::Neg(a) => ValueExpr::Neg(Box::new(a.map_refs(f))),
            ValueExpr::Cmp(op, a, b) => {
                ValueExpr::Cmp(*op, Box::new(a.map_refs(f)), Box::new(b.map_refs(f)))
            }
            ValueExpr::Not(a) => ValueExpr::Not(Box::new(a.map_refs(f))),
            ValueExpr::And(a, b) => {
                ValueExpr::And(Box::new(a.map_refs(f)), Box::new(b.map_refs(f)))
            }
            ValueExpr::Or(a, b) => ValueExpr::Or(Box::new(a.map_refs(f)), Box::new(b.map_refs(f))),
            ValueExpr::Select(c, a, b) => ValueExpr::Select(
                Box::new(c.map_refs(f)),
                Box::new(a.map_refs(f)),
                Box::new(b.map_refs(f)),
            ),
            ValueExpr::Lane(a, b) => {
                ValueExpr::Lane(Box::new(a.map_refs(f)), Box::new(b.map_refs(f)))
            }
            ValueExpr::Pack(items) => {
                ValueExpr::Pack(items.iter().map(|e| e.map_refs(f)).collect())
            }
            ValueExpr::ConstRef(name, idx) => {
                ValueExpr::ConstRef(name.clone(), idx.iter().map(|e| e.map_refs(f)).collect())
            }
        }
    }
}

pub fn parse_value_expr(text: &str) -> Result<ValueExpr, ExprError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let expr = p.or_expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Parse {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.bytes.get(self.pos + 1).copied()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.bytes[self.pos..].starts_with(token.as_bytes()) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn or_expr(&mut self) -> Result<ValueExpr, ExprError> {
        let mut lhs = self.and_expr()?;
        loop {
            self.skip_ws();
            if self.eat("||") {
                let rhs = self.and_expr()?;
                lhs = ValueExpr::Or(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn and_expr(&mut self) -> Result<ValueExpr, ExprError> {
        let mut lhs = self.not_expr()?;
        loop {
            self.skip_ws();
            if self.eat("&&") {
                let rhs = self.not_expr()?;
                lhs = ValueExpr::And(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn not_expr(&mut self) -> Result<ValueExpr, ExprError> {
        if self.peek() == Some(b'!') && self.peek2() != Some(b'=') {
            self.pos += 1;
            return Ok(ValueExpr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<ValueExpr, ExprError> {
        let lhs = self.sum()?;
        self.skip_ws();
        let op = if self.eat("==") {
            CmpOp::Eq
        } else if self.eat("!=") {
            CmpOp::Ne
        } else if self.eat("<=") {
            CmpOp::Le
        } else if self.eat(">=") {
            CmpOp::Ge
        } else if self.peek() == Some(b'<') {
            self.pos += 1;
            CmpOp::Lt
        } else if self.peek() == Some(b'>') {
            self.pos += 1;
            CmpOp::Gt
        } else {
            return Ok(lhs);
        };
        let rhs = self.sum()?;
        Ok(ValueExpr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<ValueExpr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = ValueExpr::bin(BinOp::Add, lhs, self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = ValueExpr::bin(BinOp::Sub, lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<ValueExpr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = ValueExpr::bin(BinOp::Mul, lhs, self.unary()?);
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = ValueExpr::bin(BinOp::Div, lhs, self.unary()?);
                }
                Some(b'%') => {
                    self.pos += 1;
                    lhs = ValueExpr::bin(BinOp::Mod, lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<ValueExpr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(ValueExpr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<ValueExpr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.or_expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let name = self.ident();
                match self.peek() {
                    Some(b'(') => {
                        self.pos += 1;
                        let args = self.args(b')')?;
                        self.builtin(name, args)
                    }
                    Some(b'[') => {
                        self.pos += 1;
                        let args = self.args(b']')?;
                        if args.is_empty() {
                            return Err(self.error("constant lookup needs at least one index"));
                        }
                        Ok(ValueExpr::ConstRef(name, args))
                    }
                    _ => Ok(ValueExpr::Ref(name)),
                }
            }
            Some(_) => Err(self.error("expected literal, identifier, or `(`")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn builtin(&mut self, name: String, args: Vec<ValueExpr>) -> Result<ValueExpr, ExprError> {
        let arity_error = |p: &Self, want: usize| ExprError::Parse {
            offset: p.pos,
            message: format!("`{name}` expects {want} argument(s)"),
        };
        match name.as_str() {
            "select" => {
                if args.len() != 3 {
                    return Err(arity_error(self, 3));
                }
                let mut it = args.into_iter();
                Ok(ValueExpr::Select(
                    Box::new(it.next().unwrap()),
                    Box::new(it.next().unwrap()),
                    Box::new(it.next().unwrap()),
                ))
            }
            "lane" => {
                if args.len() != 2 {
                    return Err(arity_error(self, 2));
                }
                let mut it = args.into_iter();
                Ok(ValueExpr::Lane(
                    Box::new(it.next().unwrap()),
                    Box::new(it.next().unwrap()),
                ))
            }
            "pack" => {
                if args.is_empty() {
                    return Err(arity_error(self, 1));
                }
                Ok(ValueExpr::Pack(args))
            }
            _ => Err(ExprError::Parse {
                offset: self.pos,
                message: format!("unknown builtin `{name}`"),
            }),
        }
    }

    fn args(&mut self, close: u8) -> Result<Vec<ValueExpr>, ExprError> {
        let mut out = Vec::new();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.or_expr()?);
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                }
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.error("expected `,` or closing bracket")),
            }
        }
    }

    fn number(&mut self) -> Result<ValueExpr, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let mut is_float = false;
        if self.bytes.get(self.pos) == Some(&b'.') {
            is_float = true;
            self.pos += 1;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if matches!(self.bytes.get(self.pos), Some(b'e') | Some(b'E')) {
            is_float = true;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if is_float {
            text.parse::<f64>()
                .map(ValueExpr::Float)
                .map_err(|_| ExprError::Parse {
                    offset: start,
                    message: "bad float literal".to_string(),
                })
        } else {
            text.parse::<i128>()
                .map(ValueExpr::Int)
                .map_err(|_| ExprError::Parse {
                    offset: start,
                    message: "integer literal out of range".to_string(),
                })
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }
}

// ---------------------------------------------------------------------------
// Printing (precedence-aware; round-trips through the parser).
// ---------------------------------------------------------------------------

fn precedence(e: &ValueExpr) -> u8 {
    match e {
        ValueExpr::Or(..) => 1,
        ValueExpr::And(..) => 2,
        ValueExpr::Cmp(..) => 4,
        ValueExpr::Bin(BinOp::Add | BinOp::Sub, ..) => 5,
        ValueExpr::Bin(..) => 6,
        ValueExpr::Neg(..) | ValueExpr::Not(..) => 7,
        _ => 8,
    }
}

fn fmt_child(f: &mut fmt::Formatter<'_>, child: &ValueExpr, min_prec: u8) -> fmt::Result {
    if precedence(child) < min_prec {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
        })
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

impl fmt::Display for ValueExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueExpr::Int(v) => write!(f, "{v}"),
            ValueExpr::Float(v) => {
                if v.fract() == 0.0 && v.is_finite() && v.abs() < 1e15 {
                    write!(f, "{v:.1}")
                } else {
                    write!(f, "{v}")
                }
            }
            ValueExpr::Ref(name) => write!(f, "{name}"),
            ValueExpr::Bin(op, a, b) => {
                let prec = precedence(self);
                fmt_child(f, a, prec)?;
                write!(f, " {op} ")?;
                fmt_child(f, b, prec + 1)
            }
            ValueExpr::Neg(a) => {
                write!(f, "-")?;
                fmt_child(f, a, 7)
            }
            ValueExpr::Cmp(op, a, b) => {
                fmt_child(f, a, 5)?;
                write!(f, " {op} ")?;
                fmt_child(f, b, 5)
            }
            ValueExpr::Not(a) => {
                write!(f, "!")?;
                fmt_child(f, a, 7)
            }
            ValueExpr::And(a, b) => {
                fmt_child(f, a, 2)?;
                write!(f, " && ")?;
                fmt_child(f, b, 3)
            }
            ValueExpr::Or(a, b) => {
                fmt_child(f, a, 1)?;
                write!(f, " || ")?;
                fmt_child(f, b, 2)
            }
            ValueExpr::Select(c, a, b) => write!(f, "select({c}, {a}, {b})"),
            ValueExpr::Lane(a, b) => write!(f, "lane({a}, {b})"),
            ValueExpr::Pack(items) => {
                write!(f, "pack(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{item}")?;
                }
                write!(f, ")")
            }
            ValueExpr::ConstRef(name, idx) => {
                write!(f, "{name}[")?;
                for (i, item) in idx.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{item}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl FromStr for ValueExpr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_value_expr(s)
    }
}

impl Serialize for ValueExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ValueExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_value_expr(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(text: &str) {
        let e = parse_value_expr(text).unwrap();
        let printed = e.to_string();
        let again = parse_value_expr(&printed).unwrap();
        assert_eq!(e, again, "roundtrip failed: {text} -> {printed}");
    }

    #[test]
    fn parse_and_print_roundtrip() {
        for text in [
            "a*x + y",
            "select(j - p, a_old, v)",
            "lane(zv, 3) * lane(wv, 3)",
            "pack(l0, l1, l2, l3)",
            "weights[i, j] * x_in",
            "(j >= 1) && (k + 1 < 64)",
            "select(j >= 1 && j < n, buf, 0.0)",
            "-x * 2.5 + 1e-5",
            "a / b % c",
            "!(a == b) || c != 0",
            "i % 8",
        ] {
            roundtrip(text);
        }
    }

    #[test]
    fn float_literals() {
        assert_eq!(parse_value_expr("2.0").unwrap(), ValueExpr::Float(2.0));
        assert_eq!(parse_value_expr("1e-5").unwrap(), ValueExpr::Float(1e-5));
        assert_eq!(parse_value_expr("7").unwrap(), ValueExpr::Int(7));
    }

    #[test]
    fn unknown_builtin_rejected() {
        assert!(parse_value_expr("frobnicate(a)").is_err());
    }

    #[test]
    fn refs_collects_names() {
        let e = parse_value_expr("select(i < n, w[i, j] * x, y + i)").unwrap();
        let refs = e.refs();
        assert!(refs.contains(&"i"));
        assert!(refs.contains(&"x"));
        assert!(!refs.contains(&"w"));
        assert_eq!(e.const_refs(), vec!["w"]);
    }
}
