//! Recursive-descent parser for the integer expression grammar:
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/" | "%") unary)*
//! unary   := "-" unary | primary
//! primary := INT | IDENT | "(" expr ")"
//! ```
//!
//! `/` is floor division and `%` the matching remainder. Errors carry the
//! byte offset of the offending token.

use super::{SymError, SymExpr};

pub fn parse_expr(text: &str) -> Result<SymExpr, SymError> {
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let expr = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> SymError {
        SymError::Parse {
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

    fn expr(&mut self) -> Result<SymExpr, SymError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = lhs.add(&rhs);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = lhs.sub(&rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<SymExpr, SymError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = lhs.mul(&rhs);
                }
                Some(b'/') => {
                    let at = self.pos;
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = lhs.floordiv(&rhs).map_err(|e| match e {
                        SymError::DivisionByZero => SymError::Parse {
                            offset: at,
                            message: "division by literal zero".to_string(),
                        },
                        other => other,
                    })?;
                }
                Some(b'%') => {
                    let at = self.pos;
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = lhs.modulo(&rhs).map_err(|e| match e {
                        SymError::DivisionByZero => SymError::Parse {
                            offset: at,
                            message: "modulo by literal zero".to_string(),
                        },
                        other => other,
                    })?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<SymExpr, SymError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(self.unary()?.neg());
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<SymExpr, SymError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.integer(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => Ok(SymExpr::sym(self.ident())),
            Some(_) => Err(self.error("expected integer, identifier, or `(`")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn integer(&mut self) -> Result<SymExpr, SymError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: i128 = text.parse().map_err(|_| SymError::Parse {
            offset: start,
            message: "integer literal out of range".to_string(),
        })?;
        Ok(SymExpr::int(value))
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_carries_byte_offset() {
        match parse_expr("a + $b") {
            Err(SymError::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn literal_zero_divisor_rejected_with_offset() {
        match parse_expr("x / 0") {
            Err(SymError::Parse { offset, message }) => {
                assert_eq!(offset, 2);
                assert!(message.contains("zero"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let binding = crate::symbolic::SymBinding::new();
        assert_eq!(parse_expr("2+3*4").unwrap().evaluate(&binding).unwrap(), 14);
        assert_eq!(parse_expr("(2+3)*4").unwrap().evaluate(&binding).unwrap(), 20);
        assert_eq!(parse_expr("100/10/2").unwrap().evaluate(&binding).unwrap(), 5);
        assert_eq!(parse_expr("2-3-4").unwrap().evaluate(&binding).unwrap(), -5);
    }
}
