//! Reader for the PRISM subset produced by [`super::emit`].

use super::{Assign, Command, Expr, Item, Label, Module, PrismDocument, RewardItem, Update, Value, VarDecl};
use crate::abstraction::ModelKind;
use crate::pctl::CmpOp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct PrismParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Op(CmpOp),
    Bang,
    Amp,
    Bar,
    LParen,
    RParen,
}

fn lex_expr(text: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let b = text.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        let two = text.get(i..i + 2).unwrap_or("");
        match c {
            ' ' => i += 1,
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            '&' => {
                out.push(Tok::Amp);
                i += 1
            }
            '|' => {
                out.push(Tok::Bar);
                i += 1
            }
            '!' if two == "!=" => {
                out.push(Tok::Op(CmpOp::Ne));
                i += 2
            }
            '!' => {
                out.push(Tok::Bang);
                i += 1
            }
            '<' | '>' => {
                let (op, len) = match (c, two) {
                    ('<', "<=") => (CmpOp::Le, 2),
                    ('>', ">=") => (CmpOp::Ge, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    _ => (CmpOp::Gt, 1),
                };
                out.push(Tok::Op(op));
                i += len;
            }
            '=' => {
                out.push(Tok::Op(CmpOp::Eq));
                i += 1
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
                out.push(Tok::Int(text[start..i].parse().map_err(|_| "integer out of range".to_string())?));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                out.push(Tok::Ident(text[start..i].to_string()));
            }
            _ => return Err(format!("unexpected `{}` in expression", text[i..].chars().next().unwrap_or(c))),
        }
    }
    Ok(out)
}

struct ExprParser {
    toks: Vec<Tok>,
    pos: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<(), String> {
        match self.bump() {
            Some(x) if x == t => Ok(()),
            other => Err(format!("expected {t:?}, found {other:?}")),
        }
    }

    fn or(&mut self) -> Result<Expr, String> {
        let mut v = vec![self.and()?];
        while self.peek() == Some(&Tok::Bar) {
            self.pos += 1;
            v.push(self.and()?);
        }
        Ok(Expr::or(v))
    }

    fn and(&mut self) -> Result<Expr, String> {
        let mut v = vec![self.unary()?];
        while self.peek() == Some(&Tok::Amp) {
            self.pos += 1;
            v.push(self.unary()?);
        }
        Ok(Expr::and(v))
    }

    fn unary(&mut self) -> Result<Expr, String> {
        match self.bump() {
            Some(Tok::Bang) => {
                self.expect(Tok::LParen)?;
                let e = self.or()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::Not(Box::new(e)))
            }
            Some(Tok::LParen) => {
                let e = self.or()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::Paren(Box::new(e)))
            }
            Some(Tok::Ident(id)) if id == "true" => Ok(Expr::True),
            Some(Tok::Ident(id)) if id == "false" => Ok(Expr::False),
            Some(Tok::Ident(var)) => {
                let op = match self.bump() {
                    Some(Tok::Op(op)) => op,
                    other => return Err(format!("expected a comparison after `{var}`, found {other:?}")),
                };
                match self.bump() {
                    Some(Tok::Int(value)) => Ok(Expr::Cmp { var, op, value }),
                    other => Err(format!("expected an integer, found {other:?}")),
                }
            }
            other => Err(format!("expected an expression, found {other:?}")),
        }
    }
}

fn parse_expr(text: &str) -> Result<Expr, String> {
    let mut p = ExprParser {
        toks: lex_expr(text)?,
        pos: 0,
    };
    let e = p.or()?;
    if p.pos != p.toks.len() {
        return Err(format!("unexpected {:?} after expression", p.toks[p.pos]));
    }
    Ok(e)
}

fn parse_label(text: &str) -> Result<(Label, &str), String> {
    if let Some(rest) = text.strip_prefix("[t]") {
        Ok((Label::T, rest.trim_start()))
    } else if let Some(rest) = text.strip_prefix("[p]") {
        Ok((Label::P, rest.trim_start()))
    } else {
        Err("expected `[t]` or `[p]`".into())
    }
}

fn is_ident(s: &str) -> bool {
    s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_assign(text: &str) -> Result<Assign, String> {
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| format!("expected `(var'=value)`, found `{text}`"))?;
    let (var, value) = inner
        .split_once("'=")
        .ok_or_else(|| format!("expected `'=` in `{text}`"))?;
    if !is_ident(var) {
        return Err(format!("invalid variable name `{var}`"));
    }
    let value = match value.strip_suffix("-1") {
        Some(src) if is_ident(src) => Value::Decrement(src.to_string()),
        _ => Value::Const(value.parse().map_err(|_| format!("invalid value `{value}`"))?),
    };
    Ok(Assign {
        var: var.to_string(),
        value,
    })
}

fn parse_update(text: &str) -> Result<Update, String> {
    let (prob, body) = match text.split_once(':') {
        Some((p, body)) => (
            Some(p.trim().parse::<f64>().map_err(|_| format!("invalid probability `{p}`"))?),
            body.trim(),
        ),
        None => (None, text.trim()),
    };
    let assigns = if body == "true" {
        Vec::new()
    } else {
        body.split(" & ").map(|a| parse_assign(a.trim())).collect::<Result<_, _>>()?
    };
    Ok(Update { prob, assigns })
}

fn parse_command(text: &str) -> Result<Command, String> {
    let (label, rest) = parse_label(text)?;
    let rest = rest.strip_suffix(';').ok_or("expected `;`")?;
    let (guard, updates) = rest.split_once(" -> ").ok_or("expected `->`")?;
    Ok(Command {
        label,
        guard: parse_expr(guard)?,
        updates: updates.split(" + ").map(parse_update).collect::<Result<_, _>>()?,
    })
}

fn parse_var(text: &str) -> Result<VarDecl, String> {
    let err = || format!("expected `name: [lo..hi] init v;`, found `{text}`");
    let (name, rest) = text.split_once(':').ok_or_else(err)?;
    let rest = rest.trim().strip_suffix(';').ok_or_else(err)?;
    let (range, init) = rest.split_once(" init ").ok_or_else(err)?;
    let range = range.strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(err)?;
    let (lo, hi) = range.split_once("..").ok_or_else(err)?;
    let int = |s: &str| s.trim().parse::<i64>().map_err(|_| err());
    let name = name.trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(err());
    }
    Ok(VarDecl {
        name: name.to_string(),
        lo: int(lo)?,
        hi: int(hi)?,
        init: int(init)?,
    })
}

fn parse_reward(text: &str) -> Result<RewardItem, String> {
    let body = text.strip_suffix(';').ok_or("expected `;`")?;
    let (guard, value) = body.rsplit_once(" : ").ok_or("expected ` : value`")?;
    let value: f64 = value.trim().parse().map_err(|_| format!("invalid reward `{value}`"))?;
    if guard.starts_with('[') {
        let (label, guard) = parse_label(guard)?;
        Ok(RewardItem::Transition {
            label,
            guard: parse_expr(guard)?,
            value,
        })
    } else {
        Ok(RewardItem::State {
            guard: parse_expr(guard)?,
            value,
        })
    }
}

/// Parses text in the layout written by [`PrismDocument`]'s `Display`.
pub fn parse_prism(text: &str) -> Result<PrismDocument, PrismParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let fail = |line: usize, message: String| PrismParseError { line, message };
    let (n, header) = lines.next().ok_or_else(|| fail(1, "empty document".into()))?;
    let kind = match header {
        "dtmc" => ModelKind::Dtmc,
        "mdp" => ModelKind::Mdp,
        other => return Err(fail(n, format!("expected `dtmc` or `mdp`, found `{other}`"))),
    };
    let mut doc = PrismDocument {
        kind,
        modules: Vec::new(),
        rewards: Vec::new(),
    };
    let mut module: Option<Module> = None;
    let mut in_rewards = false;
    let mut seen_rewards = false;
    for (n, line) in lines {
        if let Some(m) = module.as_mut() {
            if line == "endmodule" {
                doc.modules.extend(module.take());
            } else if let Some(c) = line.strip_prefix("//") {
                m.items.push(Item::Comment(c.to_string()));
            } else if line.starts_with('[') {
                m.items.push(Item::Command(parse_command(line).map_err(|e| fail(n, e))?));
            } else if m.items.is_empty() {
                m.vars.push(parse_var(line).map_err(|e| fail(n, e))?);
            } else {
                return Err(fail(n, format!("unexpected `{line}` in module {}", m.name)));
            }
        } else if in_rewards {
            if line == "endrewards" {
                in_rewards = false;
            } else {
                doc.rewards.push(parse_reward(line).map_err(|e| fail(n, e))?);
            }
        } else if let Some(name) = line.strip_prefix("module ") {
            if seen_rewards {
                return Err(fail(n, "module after rewards".into()));
            }
            if !is_ident(name.trim()) {
                return Err(fail(n, format!("invalid module name `{}`", name.trim())));
            }
            module = Some(Module {
                name: name.trim().to_string(),
                vars: Vec::new(),
                items: Vec::new(),
            });
        } else if line == "rewards" && !seen_rewards {
            in_rewards = true;
            seen_rewards = true;
        } else {
            return Err(fail(n, format!("unexpected `{line}`")));
        }
    }
    if module.is_some() || in_rewards {
        return Err(fail(text.lines().count(), "unterminated block".into()));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjunctions_inside_disjunctions_are_grouped() {
        let bare = parse_expr("a=1 & b=2 | c=2").unwrap();
        assert_eq!(bare, parse_expr("(a=1 & b=2) | c=2").unwrap());
        assert_eq!(parse_expr(&bare.to_string()).unwrap(), bare);
    }

    #[test]
    fn assignments_need_identifiers() {
        assert!(parse_assign("(x'=3)").is_ok());
        assert_eq!(parse_assign("(x'=x-1)").unwrap().value, Value::Decrement("x".into()));
        for bad in ["(a -> (b'=1)", "(x y'=1)", "(2x'=1)", "('=1)", "(x'=1 y-1)"] {
            assert!(parse_assign(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn expressions_round_trip() {
        for src in [
            "plan_5=0 & !(plan_4=0 & x=1 & (a=1 & b=0))",
            "!(plan_8=2) & (continue<=1 & abort<=1)",
            "(p=1 | q!=1) & r>2",
            "true",
        ] {
            let e = parse_expr(src).unwrap();
            assert_eq!(e.to_string(), src);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_prism("").is_err());
        assert!(parse_prism("dtmc\nmodule m\nx: [0..1] init 0;\n").is_err());
        let e = parse_prism("mdp\nmodule m\n[q] true -> true;\nendmodule\n").unwrap_err();
        assert_eq!(e.line, 3);
    }
}
