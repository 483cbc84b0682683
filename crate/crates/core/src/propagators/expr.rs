//! Parser for propagator expressions such as `M(0.9)+M(0)+Mk(2,0.6)`.
//!
//! ```text
//! expr  := term ('+' term)*
//! term  := 'M' '(' num ')' | 'CM' '(' num ',' num ')'
//!        | 'Mk' '(' int ',' num ')' | 'CMk' '(' int ',' num ',' num ')'
//! ```
//!
//! Whitespace is ignored everywhere. `⊕` is accepted in place of `+`.

use super::{Propagator, PropagatorError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at position {position}: {message}")]
pub struct ParseError {
    /// Character offset into the input.
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Open,
    Close,
    Comma,
    Plus,
}

struct Lexer {
    toks: Vec<(usize, Tok)>,
    end: usize,
}

fn lex(input: &str) -> Result<Lexer, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                toks.push((start, Tok::Open));
                i += 1;
            }
            ')' => {
                toks.push((start, Tok::Close));
                i += 1;
            }
            ',' => {
                toks.push((start, Tok::Comma));
                i += 1;
            }
            '+' | '⊕' if !matches!(toks.last(), Some((_, Tok::Open | Tok::Comma))) => {
                toks.push((start, Tok::Plus));
                i += 1;
            }
            c if c.is_ascii_alphabetic() => {
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                toks.push((start, Tok::Ident(chars[start..i].iter().collect())));
            }
            c if c.is_ascii_digit() || matches!(c, '-' | '+' | '.') => {
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = matches!(d, '-' | '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || matches!(d, '.' | 'e' | 'E') || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                toks.push((start, Tok::Number(chars[start..i].iter().collect())));
            }
            other => {
                return Err(ParseError {
                    position: start,
                    message: format!("unexpected character '{other}'"),
                })
            }
        }
    }
    Ok(Lexer { toks, end: chars.len() })
}

struct Parser {
    lexer: Lexer,
    pos: usize,
}

impl Parser {
    fn here(&self) -> usize {
        self.lexer.toks.get(self.pos).map_or(self.lexer.end, |t| t.0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.lexer.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        let at = self.here();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(ParseError {
                position: at,
                message: format!("expected {what}"),
            }),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let at = self.here();
        match self.next() {
            Some(Tok::Number(s)) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(ParseError {
                    position: at,
                    message: format!("invalid number '{s}'"),
                }),
            },
            _ => Err(ParseError {
                position: at,
                message: "expected a number".into(),
            }),
        }
    }

    fn count(&mut self) -> Result<usize, ParseError> {
        let at = self.here();
        match self.next() {
            Some(Tok::Number(s)) => match s.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(ParseError {
                    position: at,
                    message: format!("block size must be a positive integer, found '{s}'"),
                }),
            },
            _ => Err(ParseError {
                position: at,
                message: "expected a block size".into(),
            }),
        }
    }

    fn args(&mut self, count_first: bool, reals: usize) -> Result<(usize, Vec<f64>), ParseError> {
        self.expect(Tok::Open, "'('")?;
        let mut size = 1;
        let mut values = Vec::with_capacity(reals);
        if count_first {
            size = self.count()?;
            self.expect(Tok::Comma, "','")?;
        }
        for i in 0..reals {
            if i > 0 {
                self.expect(Tok::Comma, "','")?;
            }
            values.push(self.number()?);
        }
        self.expect(Tok::Close, "')'")?;
        Ok((size, values))
    }

    fn term(&mut self) -> Result<Propagator, ParseError> {
        let at = self.here();
        let name = match self.next() {
            Some(Tok::Ident(name)) => name,
            _ => {
                return Err(ParseError {
                    position: at,
                    message: "expected one of M, CM, Mk, CMk".into(),
                })
            }
        };
        let built = match name.as_str() {
            "M" => {
                let (_, v) = self.args(false, 1)?;
                Ok(Propagator::momentum(v[0]))
            }
            "CM" => {
                let (_, v) = self.args(false, 2)?;
                Ok(Propagator::complex_momentum(v[0], v[1]))
            }
            "Mk" => {
                let (m, v) = self.args(true, 1)?;
                Propagator::jordan_momentum(m, v[0])
            }
            "CMk" => {
                let (m, v) = self.args(true, 2)?;
                Propagator::complex_jordan_momentum(m, v[0], v[1])
            }
            other => {
                return Err(ParseError {
                    position: at,
                    message: format!("unknown propagator '{other}'"),
                })
            }
        };
        built.map_err(|e: PropagatorError| ParseError {
            position: at,
            message: e.to_string(),
        })
    }

    fn expr(&mut self) -> Result<Propagator, ParseError> {
        let mut acc = self.term()?;
        while self.pos < self.lexer.toks.len() {
            self.expect(Tok::Plus, "'+' between propagators")?;
            acc = acc.union(&self.term()?);
        }
        Ok(acc)
    }
}

/// Parses a propagator expression.
pub fn parse(input: &str) -> Result<Propagator, ParseError> {
    let lexer = lex(input)?;
    if lexer.toks.is_empty() {
        return Err(ParseError {
            position: 0,
            message: "empty propagator expression".into(),
        });
    }
    let mut p = Parser { lexer, pos: 0 };
    p.expr().map_err(|e| {
        if e.position == p.lexer.end {
            ParseError {
                message: format!("{} (at end of input)", e.message),
                ..e
            }
        } else {
            e
        }
    })
}
