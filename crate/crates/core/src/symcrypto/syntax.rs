//! Canonical text syntax for terms.
//!
//! ```text
//! term  := "'" name "'"                 atom
//!        | "n(" name ")"                nonce
//!        | "k(" name ")"                key
//!        | "ctr(" digits ")"            counter (cardinality)
//!        | "1" | "0"                    bits
//!        | "bv(" [term ("," term)*] ")" bit vector, no space after commas
//!        | "h(" term ")"
//!        | op "(" term ", " term ")"    op in pair, mac, senc, sign, or, and
//! name  := [A-Za-z0-9_.:@#-]+
//! ```
//!
//! The printer emits exactly this form; the parser also accepts any amount
//! of whitespace between tokens.

use super::term::{Term, TermError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | ':' | '@' | '#' | '-')
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(a) => write!(f, "'{a}'"),
            Term::Nonce(n) => write!(f, "n({n})"),
            Term::Key(k) => write!(f, "k({k})"),
            Term::Counter(c) => write!(f, "ctr({c})"),
            Term::Bit(true) => f.write_str("1"),
            Term::Bit(false) => f.write_str("0"),
            Term::BitVec(items) => {
                f.write_str("bv(")?;
                for (i, b) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{b}")?;
                }
                f.write_str(")")
            }
            Term::Hash(t) => write!(f, "h({t})"),
            Term::Pair(a, b) => write!(f, "pair({a}, {b})"),
            Term::Mac(a, b) => write!(f, "mac({a}, {b})"),
            Term::SymEnc(a, b) => write!(f, "senc({a}, {b})"),
            Term::Sign(a, b) => write!(f, "sign({a}, {b})"),
            Term::Or(a, b) => write!(f, "or({a}, {b})"),
            Term::And(a, b) => write!(f, "and({a}, {b})"),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, TermError> {
        Err(TermError::Parse {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<(), TermError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn name(&mut self) -> Result<&'a str, TermError> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(is_name_char) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected a name");
        }
        Ok(&self.src[start..self.pos])
    }

    fn term(&mut self) -> Result<Term, TermError> {
        self.skip_ws();
        if self.peek() == Some('\'') {
            self.pos += 1;
            let n = self.name()?;
            if self.peek() != Some('\'') {
                return self.err("unterminated atom");
            }
            self.pos += 1;
            return Ok(Term::Atom(n.into()));
        }
        let head = self.name()?;
        match head {
            "1" => return Ok(Term::Bit(true)),
            "0" => return Ok(Term::Bit(false)),
            _ => {}
        }
        self.expect('(')?;
        let t = match head {
            "n" => Term::Nonce(self.name()?.into()),
            "k" => Term::Key(self.name()?.into()),
            "ctr" => {
                let start = self.pos;
                let digits = self.name()?;
                match digits.parse() {
                    Ok(c) => Term::Counter(c),
                    Err(_) => {
                        self.pos = start;
                        return self.err("counter needs a non-negative integer");
                    }
                }
            }
            "h" => Term::hash(self.term()?),
            "bv" => {
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() != Some(')') {
                    loop {
                        items.push(self.term()?);
                        self.skip_ws();
                        if self.peek() == Some(',') {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                Term::BitVec(Arc::from(items))
            }
            "pair" | "mac" | "senc" | "sign" | "or" | "and" => {
                let a = self.term()?;
                self.expect(',')?;
                let b = self.term()?;
                match head {
                    "pair" => Term::pair(a, b),
                    "mac" => Term::mac(a, b),
                    "senc" => Term::senc(a, b),
                    "sign" => Term::sign(a, b),
                    "or" => Term::or(a, b),
                    _ => Term::and(a, b),
                }
            }
            other => return self.err(format!("unknown constructor `{other}`")),
        };
        self.expect(')')?;
        Ok(t)
    }
}

impl FromStr for Term {
    type Err = TermError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser { src: s, pos: 0 };
        let t = p.term()?;
        p.skip_ws();
        if p.pos != s.len() {
            return p.err("trailing input");
        }
        Ok(t)
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
