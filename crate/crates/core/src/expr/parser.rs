//! Recursive-descent parser.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := ('-' | '+') unary | power
//! power  := atom ('^' '-'? digits)?
//! atom   := number | 'x' digits | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

use thiserror::Error;

use super::{Expr, Node};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("variable x{index} at offset {offset} exceeds dimension {dim}")]
    VariableIndex {
        index: usize,
        dim: usize,
        offset: usize,
    },
    #[error("{func} at offset {offset} needs at least 2 arguments, got {found}")]
    Arity {
        func: String,
        found: usize,
        offset: usize,
    },
    #[error("zero power at offset {offset}")]
    ZeroPower { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::VariableIndex { offset, .. }
            | ParseError::Arity { offset, .. }
            | ParseError::ZeroPower { offset } => *offset,
        }
    }
}

/// Parses `text` as a function of `x1..x{dim}`.
pub fn parse(text: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        dim,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
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

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            match self.peek() {
                None => Err(self.syntax(format!("expected `{}`, found end of input", c as char))),
                Some(f) => Err(self.syntax(format!("expected `{}`, found `{}`", c as char, f as char))),
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = lhs + self.term()?;
            } else if self.eat(b'-') {
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = lhs * self.unary()?;
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                // `1 / u` is a plain reciprocal, so printed forms parse back unchanged.
                lhs = match lhs.node() {
                    Node::Const(c) if *c == 1.0 => rhs.recip(),
                    _ => lhs / rhs,
                };
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(-self.unary()?)
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let start = {
            self.skip_ws();
            self.pos
        };
        let negative = self.eat(b'-');
        self.skip_ws();
        let digits = self.digits();
        if digits.is_empty() {
            return Err(self.syntax("expected integer exponent"));
        }
        if matches!(self.src.get(self.pos), Some(b'.') | Some(b'e') | Some(b'E')) {
            return Err(self.syntax("exponent must be an integer"));
        }
        let k: i32 = digits.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: "exponent out of range".into(),
        })?;
        if k == 0 {
            return Err(ParseError::ZeroPower { offset: start });
        }
        Ok(base.powi(if negative { -k } else { k }))
    }

    fn digits(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(c) = self.peek() else {
            return Err(self.syntax("unexpected end of input"));
        };
        let start = self.pos;
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
            if let Some(idx) = word.strip_prefix('x') {
                if !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()) {
                    let index: usize = idx.parse().unwrap_or(usize::MAX);
                    if index == 0 || index > self.dim {
                        return Err(ParseError::VariableIndex {
                            index,
                            dim: self.dim,
                            offset: start,
                        });
                    }
                    return Ok(Expr::var(index - 1));
                }
            }
            return self.call(word.to_string(), start);
        }
        Err(self.syntax(format!("unexpected `{}`", c as char)))
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let bytes = self.src;
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut k = end + 1;
            if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                k += 1;
            }
            if k < bytes.len() && bytes[k].is_ascii_digit() {
                while k < bytes.len() && bytes[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text = std::str::from_utf8(&bytes[start..end]).unwrap_or_default();
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("invalid number `{text}`"),
        })?;
        if !value.is_finite() {
            return Err(ParseError::Syntax {
                offset: start,
                message: format!("number `{text}` out of range"),
            });
        }
        self.pos = end;
        Ok(Expr::constant(value))
    }

    fn call(&mut self, name: String, start: usize) -> Result<Expr, ParseError> {
        let unary: Option<fn(&Expr) -> Expr> = match name.as_str() {
            "exp" => Some(Expr::exp),
            "log" => Some(Expr::ln),
            "sin" => Some(Expr::sin),
            "cos" => Some(Expr::cos),
            "abs" => Some(Expr::abs),
            "max" | "min" => None,
            _ => {
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unknown function `{name}`"),
                })
            }
        };
        self.expect(b'(')?;
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        self.expect(b')')?;
        match unary {
            Some(f) => {
                if args.len() != 1 {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: format!("{name} takes one argument, got {}", args.len()),
                    });
                }
                Ok(f(&args[0]))
            }
            None => {
                if args.len() < 2 {
                    return Err(ParseError::Arity {
                        func: name,
                        found: args.len(),
                        offset: start,
                    });
                }
                Ok(if name == "max" {
                    Expr::wrap(Node::Max(args))
                } else {
                    Expr::wrap(Node::Min(args))
                })
            }
        }
    }
}
