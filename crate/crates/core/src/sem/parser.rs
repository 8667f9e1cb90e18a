//! Model language:
//!
//! ```text
//! # comment
//! MR1 =~ V30 + V31 + V32 + V33     # measurement (first loading fixed to 1)
//! MR3 ~ MR4 + MR1                  # regressions among factors
//! MR1 ~~ MR2                       # covariance
//! MR1 ~~ 1*MR1                     # fixed variance
//! MR2 =~ NA*V46 + V47 + V48        # free the marker loading
//! ```
//!
//! Statements are separated by newlines or `;`. A numeric prefix `c*` fixes
//! a coefficient, `NA*` frees it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "=~")]
    Measure,
    #[serde(rename = "~")]
    Regress,
    #[serde(rename = "~~")]
    Covary,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Measure => "=~",
            Op::Regress => "~",
            Op::Covary => "~~",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Modifier {
    Fixed(f64),
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub modifier: Option<Modifier>,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub lhs: Term,
    pub op: Op,
    pub rhs: Vec<Term>,
}

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    line: usize,
    text: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Self {
            chars: text.char_indices().collect(),
            pos: 0,
            line,
            text,
        }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].1.is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.chars.len()
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        let start = self.chars.get(self.pos).map_or(self.text.len(), |c| c.0);
        if self.text[start..].starts_with(s) {
            self.pos += s.chars().count();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<(String, usize), ParseError> {
        self.skip_ws();
        let col = self.column();
        let start = self.pos;
        while let Some(c) = self.peek() {
            let ok = if self.pos == start {
                c.is_alphabetic() || c == '_' || c == '.'
            } else {
                c.is_alphanumeric() || c == '_' || c == '.'
            };
            if !ok {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a variable name"));
        }
        Ok((self.chars[start..self.pos].iter().map(|c| c.1).collect(), col))
    }

    fn number(&mut self) -> Option<f64> {
        self.skip_ws();
        let start = self.pos;
        let mut end = start;
        while let Some(&(_, c)) = self.chars.get(end) {
            if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E' {
                end += 1;
            } else {
                break;
            }
        }
        if end == start {
            return None;
        }
        let s: String = self.chars[start..end].iter().map(|c| c.1).collect();
        let v = s.parse::<f64>().ok()?;
        // Only a modifier if followed by '*'.
        let save = self.pos;
        self.pos = end;
        if self.eat("*") {
            Some(v)
        } else {
            self.pos = save;
            None
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        self.skip_ws();
        let mut modifier = None;
        if let Some(v) = self.number() {
            modifier = Some(Modifier::Fixed(v));
        } else {
            let save = self.pos;
            if self.eat("NA") && self.eat("*") {
                modifier = Some(Modifier::Free);
            } else {
                self.pos = save;
            }
        }
        let (name, column) = self.ident()?;
        Ok(Term {
            name,
            modifier,
            line: self.line,
            column,
        })
    }
}

fn parse_statement(text: &str, line: usize, offset: usize) -> Result<Statement, ParseError> {
    let mut c = Cursor::new(text, line);
    let shift = |mut e: ParseError| {
        e.column += offset;
        e
    };
    let (name, column) = c.ident().map_err(shift)?;
    let lhs = Term {
        name,
        modifier: None,
        line,
        column: column + offset,
    };
    let op = if c.eat("=~") {
        Op::Measure
    } else if c.eat("~~") {
        Op::Covary
    } else if c.eat("~") {
        Op::Regress
    } else {
        return Err(shift(c.err("expected `=~`, `~` or `~~`")));
    };
    let mut rhs = Vec::new();
    loop {
        let mut t = c.term().map_err(shift)?;
        t.column += offset;
        rhs.push(t);
        if c.at_end() {
            break;
        }
        if !c.eat("+") {
            return Err(shift(c.err("expected `+` or end of statement")));
        }
    }
    Ok(Statement { lhs, op, rhs })
}

/// Parses model text into statements.
pub fn parse_statements(text: &str) -> Result<Vec<Statement>, ParseError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("");
        let mut offset = 0;
        for part in body.split(';') {
            let chars = part.chars().count();
            if !part.trim().is_empty() {
                out.push(parse_statement(part, line, offset)?);
            }
            offset += chars + 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurement_line() {
        let s = parse_statements("MR1 =~ V30+V31 + V32+V33").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].op, Op::Measure);
        let names: Vec<&str> = s[0].rhs.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["V30", "V31", "V32", "V33"]);
    }

    #[test]
    fn modifiers_comments_and_separators() {
        let s = parse_statements("# header\nA =~ NA*x1 + 0.5*x2 # trailing\nA ~~ 1*A; B ~ A").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].rhs[0].modifier, Some(Modifier::Free));
        assert_eq!(s[0].rhs[1].modifier, Some(Modifier::Fixed(0.5)));
        assert_eq!(s[1].op, Op::Covary);
        assert_eq!(s[1].rhs[0].modifier, Some(Modifier::Fixed(1.0)));
        assert_eq!(s[2].op, Op::Regress);
        assert_eq!(s[2].lhs.column, 11);
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_statements("A =~ x1\nB => x2").unwrap_err();
        assert_eq!(e.line, 2);
        assert_eq!(e.column, 3);
        let e = parse_statements("A =~ x1 x2").unwrap_err();
        assert_eq!((e.line, e.column), (1, 9));
        let e = parse_statements("A =~ x1 + ").unwrap_err();
        assert_eq!(e.line, 1);
    }
}
