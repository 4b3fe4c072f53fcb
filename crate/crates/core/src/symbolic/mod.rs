//! Symbolic integer expressions for data volumes, map ranges, and access
//! indices.
//!
//! Expressions are kept in a canonical sum-of-products form: a sorted list of
//! monomials with integer coefficients, where a monomial is a sorted multiset
//! of atoms. An atom is either a named symbol or an opaque floor-division /
//! modulo sub-expression. Two expressions that are equal as polynomials (with
//! div/mod treated as opaque terms) therefore compare equal structurally.
//!
//! Arithmetic is exact: evaluation uses checked 128-bit integers, `/` is
//! floor division (rounds toward negative infinity) and `%` is the matching
//! remainder, so `a == (a/b)*b + a%b` holds for all signs.

mod parser;

pub use parser::parse_expr;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Integer type used for literals, coefficients, and evaluation results.
pub type Int = i128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SymError {
    #[error("syntax error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("division by zero")]
    DivisionByZero,
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
    #[error("integer overflow while evaluating")]
    Overflow,
}

/// An opaque multiplicand inside a monomial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Atom {
    Sym(String),
    FloorDiv(SymExpr, SymExpr),
    Mod(SymExpr, SymExpr),
}

/// A product of atoms with positive integer powers, sorted by atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
struct Monomial(Vec<(Atom, u32)>);

impl Monomial {
    const ONE: Monomial = Monomial(Vec::new());

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut factors = self.0.clone();
        for (atom, pow) in &other.0 {
            match factors.iter_mut().find(|(a, _)| a == atom) {
                Some((_, p)) => *p += *pow,
                None => factors.push((atom.clone(), *pow)),
            }
        }
        factors.sort();
        Monomial(factors)
    }
}

/// Canonicalized symbolic integer expression.
///
/// Construction keeps the canonical form, so canonicalization is implicit
/// and idempotent; structural equality is polynomial equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SymExpr {
    /// Terms sorted by monomial; coefficients are non-zero. Empty means 0.
    terms: Vec<(Monomial, Int)>,
}

impl SymExpr {
    pub fn int(value: Int) -> SymExpr {
        if value == 0 {
            SymExpr::default()
        } else {
            SymExpr {
                terms: vec![(Monomial::ONE, value)],
            }
        }
    }

    pub fn sym(name: impl Into<String>) -> SymExpr {
        SymExpr {
            terms: vec![(Monomial(vec![(Atom::Sym(name.into()), 1)]), 1)],
        }
    }

    pub fn zero() -> SymExpr {
        SymExpr::default()
    }

    pub fn one() -> SymExpr {
        SymExpr::int(1)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Returns the value if the expression is an integer literal.
    pub fn as_int(&self) -> Option<Int> {
        match self.terms.as_slice() {
            [] => Some(0),
            [(m, c)] if *m == Monomial::ONE => Some(*c),
            _ => None,
        }
    }

    /// Returns the symbol name if the expression is a bare symbol.
    pub fn as_sym(&self) -> Option<&str> {
        match self.terms.as_slice() {
            [(Monomial(factors), 1)] => match factors.as_slice() {
                [(Atom::Sym(name), 1)] => Some(name),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn add(&self, other: &SymExpr) -> SymExpr {
        let mut acc: BTreeMap<Monomial, Int> = self.terms.iter().cloned().collect();
        for (mono, coeff) in &other.terms {
            let entry = acc.entry(mono.clone()).or_insert(0);
            *entry = entry
                .checked_add(*coeff)
                .expect("coefficient overflow in symbolic add");
        }
        SymExpr::from_map(acc)
    }

    pub fn sub(&self, other: &SymExpr) -> SymExpr {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> SymExpr {
        SymExpr {
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c.checked_neg().expect("coefficient overflow")))
                .collect(),
        }
    }

    pub fn mul(&self, other: &SymExpr) -> SymExpr {
        let mut acc: BTreeMap<Monomial, Int> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let coeff = ca
                    .checked_mul(*cb)
                    .expect("coefficient overflow in symbolic mul");
                let mono = ma.mul(mb);
                let entry = acc.entry(mono).or_insert(0);
                *entry = entry.checked_add(coeff).expect("coefficient overflow");
            }
        }
        SymExpr::from_map(acc)
    }

    /// Floor division; opaque unless both sides are literals.
    pub fn floordiv(&self, den: &SymExpr) -> Result<SymExpr, SymError> {
        if den.as_int() == Some(0) {
            return Err(SymError::DivisionByZero);
        }
        if den.as_int() == Some(1) {
            return Ok(self.clone());
        }
        if let (Some(a), Some(b)) = (self.as_int(), den.as_int()) {
            return Ok(SymExpr::int(div_floor(a, b)));
        }
        Ok(SymExpr::atom(Atom::FloorDiv(self.clone(), den.clone())))
    }

    /// Modulo paired with floor division; opaque unless both sides are literals.
    pub fn modulo(&self, den: &SymExpr) -> Result<SymExpr, SymError> {
        if den.as_int() == Some(0) {
            return Err(SymError::DivisionByZero);
        }
        if den.as_int() == Some(1) {
            return Ok(SymExpr::zero());
        }
        if let (Some(a), Some(b)) = (self.as_int(), den.as_int()) {
            return Ok(SymExpr::int(mod_floor(a, b)));
        }
        Ok(SymExpr::atom(Atom::Mod(self.clone(), den.clone())))
    }

    fn atom(atom: Atom) -> SymExpr {
        SymExpr {
            terms: vec![(Monomial(vec![(atom, 1)]), 1)],
        }
    }

    fn from_map(map: BTreeMap<Monomial, Int>) -> SymExpr {
        SymExpr {
            terms: map.into_iter().filter(|(_, c)| *c != 0).collect(),
        }
    }

    /// Exact evaluation under a complete binding.
    pub fn evaluate(&self, binding: &SymBinding) -> Result<Int, SymError> {
        let mut total: Int = 0;
        for (mono, coeff) in &self.terms {
            let mut value = *coeff;
            for (atom, pow) in &mono.0 {
                let base = atom.evaluate(binding)?;
                for _ in 0..*pow {
                    value = value.checked_mul(base).ok_or(SymError::Overflow)?;
                }
            }
            total = total.checked_add(value).ok_or(SymError::Overflow)?;
        }
        Ok(total)
    }

    /// Replaces symbols by expressions and re-canonicalizes.
    pub fn substitute(&self, map: &BTreeMap<String, SymExpr>) -> Result<SymExpr, SymError> {
        let mut result = SymExpr::zero();
        for (mono, coeff) in &self.terms {
            let mut term = SymExpr::int(*coeff);
            for (atom, pow) in &mono.0 {
                let base = match atom {
                    Atom::Sym(name) => match map.get(name) {
                        Some(expr) => expr.clone(),
                        None => SymExpr::sym(name.clone()),
                    },
                    Atom::FloorDiv(a, b) => a.substitute(map)?.floordiv(&b.substitute(map)?)?,
                    Atom::Mod(a, b) => a.substitute(map)?.modulo(&b.substitute(map)?)?,
                };
                for _ in 0..*pow {
                    term = term.mul(&base);
                }
            }
            result = result.add(&term);
        }
        Ok(result)
    }

    /// Renames symbols (used by access-order matching). Total for any map.
    pub fn rename(&self, rename: &BTreeMap<String, String>) -> SymExpr {
        let map: BTreeMap<String, SymExpr> = rename
            .iter()
            .map(|(from, to)| (from.clone(), SymExpr::sym(to.clone())))
            .collect();
        // Renaming cannot introduce a zero denominator.
        self.substitute(&map).expect("rename is total")
    }

    /// All symbols occurring in the expression, including inside div/mod.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        for (mono, _) in &self.terms {
            for (atom, _) in &mono.0 {
                match atom {
                    Atom::Sym(name) => {
                        out.insert(name.clone());
                    }
                    Atom::FloorDiv(a, b) | Atom::Mod(a, b) => {
                        a.collect_symbols(out);
                        b.collect_symbols(out);
                    }
                }
            }
        }
    }
}

/// True iff `canon(rename(a))` equals `canon(b)`.
pub fn equals_under_renaming(
    a: &SymExpr,
    b: &SymExpr,
    rename: &BTreeMap<String, String>,
) -> bool {
    a.rename(rename) == *b
}

/// Floor division: rounds toward negative infinity.
pub fn div_floor(a: Int, b: Int) -> Int {
    let q = a / b;
    let r = a % b;
    if r != 0 && (r < 0) != (b < 0) {
        q - 1
    } else {
        q
    }
}

/// Remainder matching [`div_floor`]: `a == div_floor(a,b)*b + mod_floor(a,b)`.
pub fn mod_floor(a: Int, b: Int) -> Int {
    a - div_floor(a, b) * b
}

impl Atom {
    fn evaluate(&self, binding: &SymBinding) -> Result<Int, SymError> {
        match self {
            Atom::Sym(name) => binding.get(name),
            Atom::FloorDiv(a, b) => {
                let num = a.evaluate(binding)?;
                let den = b.evaluate(binding)?;
                if den == 0 {
                    return Err(SymError::DivisionByZero);
                }
                Ok(div_floor(num, den))
            }
            Atom::Mod(a, b) => {
                let num = a.evaluate(binding)?;
                let den = b.evaluate(binding)?;
                if den == 0 {
                    return Err(SymError::DivisionByZero);
                }
                Ok(mod_floor(num, den))
            }
        }
    }
}

/// Mapping from symbol names to integer values. Lookups of unbound symbols
/// fail; there are no silent defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymBinding(BTreeMap<String, Int>);

impl SymBinding {
    pub fn new() -> SymBinding {
        SymBinding::default()
    }

    pub fn bind(mut self, name: impl Into<String>, value: Int) -> SymBinding {
        self.0.insert(name.into(), value);
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: Int) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<Int, SymError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| SymError::UnboundSymbol(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    /// Removes a binding, returning the previous value (used to restore
    /// shadowed loop parameters).
    pub fn remove(&mut self, name: &str) -> Option<Int> {
        self.0.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Int)> {
        self.0.iter()
    }
}

impl FromIterator<(String, Int)> for SymBinding {
    fn from_iter<T: IntoIterator<Item = (String, Int)>>(iter: T) -> Self {
        SymBinding(iter.into_iter().collect())
    }
}

// ---------------------------------------------------------------------------
// Printing. The printed form re-parses to the identical canonical expression.
// ---------------------------------------------------------------------------

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (mono, coeff)) in self.terms.iter().enumerate() {
            let negative = *coeff < 0;
            if i == 0 {
                if negative {
                    write!(f, "-")?;
                }
            } else if negative {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let magnitude = coeff.unsigned_abs();
            let mut wrote_factor = false;
            if magnitude != 1 || mono.0.is_empty() {
                write!(f, "{magnitude}")?;
                wrote_factor = true;
            }
            for (atom, pow) in &mono.0 {
                for _ in 0..*pow {
                    if wrote_factor {
                        write!(f, "*")?;
                    }
                    write!(f, "{atom}")?;
                    wrote_factor = true;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Sym(name) => write!(f, "{name}"),
            Atom::FloorDiv(a, b) => write!(f, "(({a}) / ({b}))"),
            Atom::Mod(a, b) => write!(f, "(({a}) % ({b}))"),
        }
    }
}

impl FromStr for SymExpr {
    type Err = SymError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

impl Serialize for SymExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SymExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_expr(&text).map_err(serde::de::Error::custom)
    }
}

impl From<Int> for SymExpr {
    fn from(value: Int) -> Self {
        SymExpr::int(value)
    }
}

impl From<&str> for SymExpr {
    fn from(name: &str) -> Self {
        SymExpr::sym(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> SymExpr {
        parse_expr(text).unwrap()
    }

    #[test]
    fn parse_volume_expression() {
        let e = p("K*M*(N/P)");
        assert_eq!(
            e,
            SymExpr::sym("K")
                .mul(&SymExpr::sym("M"))
                .mul(&SymExpr::sym("N").floordiv(&SymExpr::sym("P")).unwrap())
        );
    }

    #[test]
    fn ring_identities_fold() {
        assert_eq!(p("0*x + 7"), SymExpr::int(7));
        assert_eq!(p("x - x"), SymExpr::zero());
        assert_eq!(p("x*1"), SymExpr::sym("x"));
    }

    #[test]
    fn difference_of_squares_canonicalizes() {
        assert_eq!(p("(i+1)*(i-1)"), p("i*i - 1"));
    }

    #[test]
    fn evaluate_volume() {
        let binding = SymBinding::new()
            .bind("K", 64)
            .bind("M", 64)
            .bind("N", 64)
            .bind("P", 4);
        assert_eq!(p("K*M*(N/P)").evaluate(&binding).unwrap(), 65536);
    }

    #[test]
    fn floor_division_rounds_down() {
        assert_eq!(p("7/2").as_int(), Some(3));
        assert_eq!(p("-7/2").as_int(), Some(-4));
        assert_eq!(p("7/-2").as_int(), Some(-4));
        assert_eq!(p("-7/-2").as_int(), Some(3));
    }

    #[test]
    fn mod_matches_floor_division() {
        for a in [-9i128, -7, -1, 0, 1, 6, 13] {
            for b in [-4i128, -3, 2, 5] {
                assert_eq!(a, div_floor(a, b) * b + mod_floor(a, b), "a={a} b={b}");
                let e = p("a % b");
                let binding = SymBinding::new().bind("a", a).bind("b", b);
                assert_eq!(e.evaluate(&binding).unwrap(), mod_floor(a, b));
            }
        }
    }

    #[test]
    fn division_by_zero_rejected() {
        assert!(matches!(parse_expr("x / 0"), Err(SymError::Parse { .. })));
        assert_eq!(
            SymExpr::sym("x").floordiv(&SymExpr::zero()),
            Err(SymError::DivisionByZero)
        );
        let e = p("x / y");
        let binding = SymBinding::new().bind("x", 3).bind("y", 0);
        assert_eq!(e.evaluate(&binding), Err(SymError::DivisionByZero));
    }

    #[test]
    fn unbound_symbol_fails_loudly() {
        let e = p("x + y");
        let binding = SymBinding::new().bind("x", 1);
        assert_eq!(e.evaluate(&binding), Err(SymError::UnboundSymbol("y".into())));
    }

    #[test]
    fn overflow_reported() {
        let e = p("x*x");
        let binding = SymBinding::new().bind("x", i128::MAX / 2);
        assert_eq!(e.evaluate(&binding), Err(SymError::Overflow));
    }

    #[test]
    fn renaming_equality() {
        let rename: BTreeMap<String, String> = [("i", "p"), ("j", "q")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert!(equals_under_renaming(&p("i*M+j"), &p("p*M+q"), &rename));
        assert!(equals_under_renaming(&p("2*(i+j)"), &p("2*p + 2*q"), &rename));
        let identity = BTreeMap::new();
        assert!(!equals_under_renaming(&p("i+1"), &p("i+2"), &identity));
    }

    #[test]
    fn div_mod_opaque_but_structural() {
        assert_eq!(p("(N/P) + (N/P)"), p("2*(N/P)"));
        // Distribution over opaque terms is not performed.
        assert_ne!(p("(x+y)/2"), p("x/2 + y/2"));
    }

    #[test]
    fn print_parse_fixpoint() {
        for text in [
            "K*M*(N/P)",
            "(i+1)*(i-1)",
            "-3*x + y*y - 7",
            "x % 5 + (a*b) / (c - 1)",
            "0",
            "-x",
            "2*x*x*y",
        ] {
            let once = p(text);
            let twice = p(&once.to_string());
            assert_eq!(once, twice, "fixpoint failed for {text}");
            assert_eq!(once.to_string(), twice.to_string());
        }
    }

    #[test]
    fn substitute_then_evaluate_matches_bind_then_evaluate() {
        let e = p("x*x + 3*x*y - y + 4");
        let map: BTreeMap<String, SymExpr> =
            [("x".to_string(), p("u + 2")), ("y".to_string(), p("5"))].into();
        let substituted = e.substitute(&map).unwrap();
        for u in [-3i128, 0, 7] {
            let inner = SymBinding::new().bind("u", u);
            let direct = SymBinding::new().bind("x", u + 2).bind("y", 5);
            assert_eq!(
                substituted.evaluate(&inner).unwrap(),
                e.evaluate(&direct).unwrap()
            );
        }
    }
}
