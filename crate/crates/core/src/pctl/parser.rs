use super::{AtomicProp, CmpOp, Comparison, PathFormula, Quantity, Query, RewardPath, StateFormula};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("column {}: {message}", .offset + 1)]
pub struct QueryError {
    /// Byte offset into the query text.
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Amp,
    Pipe,
    Bang,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Query,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::Str(s) => format!("label \"{s}\""),
            Tok::Eof => "end of input".to_string(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Ne => "`!=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Query => "`=?`".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, QueryError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let two = |n: u8| bytes.get(i + 1) == Some(&n);
        let tok = match c {
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'&' => Tok::Amp,
            b'|' => Tok::Pipe,
            b'!' if two(b'=') => {
                i += 1;
                Tok::Ne
            }
            b'!' => Tok::Bang,
            b'=' if two(b'?') => {
                i += 1;
                Tok::Query
            }
            b'=' => Tok::Eq,
            b'<' if two(b'=') => {
                i += 1;
                Tok::Le
            }
            b'<' => Tok::Lt,
            b'>' if two(b'=') => {
                i += 1;
                Tok::Ge
            }
            b'>' => Tok::Gt,
            b'"' => {
                let end = text[i + 1..].find('"').ok_or_else(|| QueryError {
                    offset: start,
                    message: "unterminated label".into(),
                })?;
                let label = text[i + 1..i + 1 + end].to_string();
                i += end + 1;
                Tok::Str(label)
            }
            c if c.is_ascii_digit() || c == b'.' => {
                let mut j = i;
                while j < bytes.len() {
                    let d = bytes[j];
                    let exp_sign = (d == b'-' || d == b'+')
                        && j > i
                        && matches!(bytes[j - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let s = text[i..j].to_string();
                i = j - 1;
                Tok::Number(s)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let s = text[i..j].to_string();
                i = j - 1;
                Tok::Ident(s)
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(QueryError {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::Eof, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn unexpected<T>(&self, expected: &str) -> Result<T, QueryError> {
        self.error(format!("expected {expected}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), QueryError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.unexpected(what)
        }
    }

    fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == name)
    }

    /// Whether the next tokens open a P or R operator.
    fn at_operator(&self) -> Option<(char, Quantity)> {
        let Tok::Ident(name) = self.peek() else {
            return None;
        };
        let (kind, quantity) = match name.as_str() {
            "P" => ('P', Quantity::Value),
            "R" => ('R', Quantity::Value),
            "Pmin" => ('P', Quantity::Min),
            "Pmax" => ('P', Quantity::Max),
            "Rmin" => ('R', Quantity::Min),
            "Rmax" => ('R', Quantity::Max),
            _ => return None,
        };
        let next = self.peek_at(1);
        let ok = match quantity {
            Quantity::Value => matches!(next, Tok::Query | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge),
            _ => matches!(next, Tok::Query),
        };
        ok.then_some((kind, quantity))
    }

    fn query(&mut self) -> Result<Query, QueryError> {
        if let Some((kind, quantity)) = self.at_operator() {
            if *self.peek_at(1) == Tok::Query {
                self.bump();
                self.bump();
                self.expect(Tok::LBracket, "`[`")?;
                let q = if kind == 'P' {
                    Query::Prob {
                        quantity,
                        path: self.path()?,
                    }
                } else {
                    Query::Reward {
                        quantity,
                        path: self.reward_path()?,
                    }
                };
                self.expect(Tok::RBracket, "`]`")?;
                return Ok(q);
            }
        }
        Ok(Query::State(self.state()?))
    }

    fn state(&mut self) -> Result<StateFormula, QueryError> {
        let mut lhs = self.conj()?;
        while *self.peek() == Tok::Pipe {
            self.bump();
            let rhs = self.conj()?;
            lhs = StateFormula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<StateFormula, QueryError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::Amp {
            self.bump();
            let rhs = self.unary()?;
            lhs = StateFormula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<StateFormula, QueryError> {
        if *self.peek() == Tok::Bang {
            self.bump();
            return Ok(StateFormula::not(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<StateFormula, QueryError> {
        if let Some((kind, quantity)) = self.at_operator() {
            if quantity != Quantity::Value || *self.peek_at(1) == Tok::Query {
                return self.error("quantitative operators (`=?`) are only allowed at the top level");
            }
            self.bump();
            let cmp = match self.bump() {
                Tok::Lt => Comparison::Lt,
                Tok::Le => Comparison::Le,
                Tok::Gt => Comparison::Gt,
                _ => Comparison::Ge,
            };
            let bound = self.number()?;
            if kind == 'P' && !(0.0..=1.0).contains(&bound) {
                return self.error(format!("probability bound {bound} is outside [0, 1]"));
            }
            self.expect(Tok::LBracket, "`[`")?;
            let f = if kind == 'P' {
                StateFormula::Prob {
                    cmp,
                    bound,
                    path: Box::new(self.path()?),
                }
            } else {
                StateFormula::Reward {
                    cmp,
                    bound,
                    path: Box::new(self.reward_path()?),
                }
            };
            self.expect(Tok::RBracket, "`]`")?;
            return Ok(f);
        }
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let f = self.state()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Tok::Str(label) => {
                self.bump();
                Ok(StateFormula::Label(label))
            }
            Tok::Ident(name) => {
                if matches!(name.as_str(), "X" | "U" | "F" | "C") {
                    return self.error(format!("temporal operator `{name}` outside P or R"));
                }
                self.bump();
                match name.as_str() {
                    "true" => return Ok(StateFormula::True),
                    "false" => return Ok(StateFormula::False),
                    _ => {}
                }
                let op = match self.peek() {
                    Tok::Eq => CmpOp::Eq,
                    Tok::Ne => CmpOp::Ne,
                    Tok::Lt => CmpOp::Lt,
                    Tok::Le => CmpOp::Le,
                    Tok::Gt => CmpOp::Gt,
                    Tok::Ge => CmpOp::Ge,
                    _ => {
                        return Ok(StateFormula::Atom(AtomicProp {
                            var: name,
                            op: CmpOp::Ne,
                            value: 0,
                        }))
                    }
                };
                self.bump();
                let value = self.integer()?;
                Ok(StateFormula::Atom(AtomicProp {
                    var: name,
                    op,
                    value,
                }))
            }
            _ => self.unexpected("a state formula"),
        }
    }

    fn path(&mut self) -> Result<PathFormula, QueryError> {
        if self.is_ident("X") {
            self.bump();
            return Ok(PathFormula::Next(self.unary()?));
        }
        if self.is_ident("F") {
            self.bump();
            let bound = self.step_bound()?;
            return Ok(PathFormula::eventually(self.unary()?, bound));
        }
        let lhs = self.unary()?;
        if !self.is_ident("U") {
            return self.unexpected("`U`");
        }
        self.bump();
        let bound = self.step_bound()?;
        let rhs = self.unary()?;
        Ok(PathFormula::Until { lhs, rhs, bound })
    }

    fn reward_path(&mut self) -> Result<RewardPath, QueryError> {
        if self.is_ident("C") {
            self.bump();
            return match self.step_bound()? {
                Some(k) => Ok(RewardPath::Cumulative(k)),
                None => self.unexpected("`<=` after `C`"),
            };
        }
        if self.is_ident("F") {
            self.bump();
            return Ok(RewardPath::Reach(self.unary()?));
        }
        self.unexpected("`C<=k` or `F`")
    }

    fn step_bound(&mut self) -> Result<Option<u32>, QueryError> {
        if *self.peek() != Tok::Le {
            return Ok(None);
        }
        self.bump();
        let k = self.integer()?;
        u32::try_from(k)
            .map(Some)
            .or_else(|_| self.error(format!("step bound {k} out of range")))
    }

    fn integer(&mut self) -> Result<i64, QueryError> {
        match self.peek().clone() {
            Tok::Number(s) => match s.parse::<i64>() {
                Ok(v) => {
                    self.bump();
                    Ok(v)
                }
                Err(_) => self.error(format!("expected an integer, found `{s}`")),
            },
            _ => self.unexpected("an integer"),
        }
    }

    fn number(&mut self) -> Result<f64, QueryError> {
        match self.peek().clone() {
            Tok::Number(s) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    self.bump();
                    Ok(v)
                }
                _ => self.error(format!("invalid number `{s}`")),
            },
            _ => self.unexpected("a number"),
        }
    }
}

/// Parses a query: `P=? [..]`, `Pmin=? [..]`, `Pmax=? [..]`, the `R`
/// counterparts, or a state formula.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let q = p.query()?;
    if *p.peek() != Tok::Eof {
        return p.unexpected("end of query");
    }
    Ok(q)
}

/// Parses a state formula only.
pub fn parse_state_formula(text: &str) -> Result<StateFormula, QueryError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let f = p.state()?;
    if *p.peek() != Tok::Eof {
        return p.unexpected("end of formula");
    }
    Ok(f)
}
