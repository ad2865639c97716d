use std::collections::HashMap;

use super::{Diagnostic, ParseFailure, Parsed, Section, SectionKind, SourceDocument, SourceLine, Span};
use crate::agent_model::{
    ActionDecl, AgentSpec, BeliefAtom, BeliefId, BeliefKind, BodyStep, ContextFormula, Direction, Event,
    Literal, LogicRule, Plan, PlanId, RewardDecl, RewardTarget, SelectorDecl, SkillDecl, StepAction,
};
use crate::env_model::{DelayedBernoulli, FeedbackOutcome, PerceptDynamics};
use crate::pctl::{parse_query, Comparison, Query};
use crate::reasoner::check_initial_closure;

/// Span of the byte range `start..end` of a line. Offsets inside a
/// multi-byte character widen the range to cover the whole character.
fn span_in(line: &SourceLine, start: usize, end: usize) -> Span {
    let text = &line.text;
    let mut start = start.min(text.len());
    while !text.is_char_boundary(start) {
        start -= 1;
    }
    let mut end = end.clamp(start, text.len());
    while !text.is_char_boundary(end) {
        end += 1;
    }
    Span {
        line: line.number,
        col: line.col + line.text[..start].chars().count(),
        len: line.text[start..end].chars().count(),
    }
}

fn whole(line: &SourceLine) -> Span {
    span_in(line, 0, line.text.len())
}

/// Strips one trailing `.` and surrounding whitespace from a sentence.
fn sentence(text: &str) -> &str {
    let t = text.trim();
    t.strip_suffix('.').unwrap_or(t).trim_end()
}

#[derive(Debug, Clone, Copy)]
struct Triple {
    db: DelayedBernoulli,
}

fn parse_triple(line: &SourceLine, start: usize, inner: &str) -> Result<Triple, Diagnostic> {
    let span = span_in(line, start, start + inner.len() + 2);
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Diagnostic::error(
            "E001",
            span,
            format!("expected `[p,mu,sigma]`, found `[{inner}]`"),
        ));
    }
    let p: f64 = parts[0]
        .parse()
        .ok()
        .filter(|p: &f64| p.is_finite())
        .ok_or_else(|| Diagnostic::error("E005", span, format!("invalid probability `{}`", parts[0])))?;
    let int = |s: &str, what: &str| {
        s.parse::<u32>()
            .map_err(|_| Diagnostic::error("E005", span, format!("{what} must be a non-negative integer, found `{s}`")))
    };
    let db = DelayedBernoulli {
        p,
        mu: int(parts[1], "mu")?,
        sigma: int(parts[2], "sigma")?,
    };
    db.validate().map_err(|reason| Diagnostic::error("E005", span, reason))?;
    Ok(Triple { db })
}

fn parse_reward(line: &SourceLine, start: usize, inner: &str) -> Result<(f64, Span), Diagnostic> {
    let span = span_in(line, start, start + inner.len() + 2);
    match inner.trim().parse::<f64>() {
        Ok(r) if r.is_finite() && r >= 0.0 => Ok((r, span)),
        _ => Err(Diagnostic::error(
            "E005",
            span,
            format!("reward must be a non-negative number, found `{}`", inner.trim()),
        )),
    }
}

/// Finds the `close` matching an opening bracket at `open` (no nesting).
fn closing(text: &str, open: usize, close: char) -> Option<usize> {
    text[open + 1..].find(close).map(|i| open + 1 + i)
}

/// Splits on commas that are not inside `[...]`, returning byte ranges.
fn split_top(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push((start, i));
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push((start, text.len()));
    out
}

/// Belief reference written either as `^[text]` or as plain text.
fn belief_text(raw: &str) -> &str {
    let t = raw.trim();
    match t.strip_prefix("^[").and_then(|r| r.strip_suffix(']')) {
        Some(inner) => sentence(inner),
        None => sentence(t),
    }
}

struct PerceptLine {
    id: Option<BeliefId>,
    span: Span,
    conditions: Vec<(String, Span)>,
    activation: Option<Triple>,
    deactivation: Option<Triple>,
    reward: Option<(f64, Span)>,
}

fn parse_percept_line(line: &SourceLine) -> Result<PerceptLine, Diagnostic> {
    let text = line.text.as_str();
    let head_end = text.find('{').unwrap_or(text.len());
    let name = sentence(&text[..head_end]);
    if name.is_empty() || !name.chars().any(|c| c.is_ascii_alphanumeric()) {
        return Err(Diagnostic::error("E001", whole(line), "expected a percept sentence"));
    }
    let mut out = PerceptLine {
        id: None,
        span: span_in(line, 0, head_end),
        conditions: Vec::new(),
        activation: None,
        deactivation: None,
        reward: None,
    };
    let mut pos = head_end;
    while pos < text.len() {
        let rest = &text[pos..];
        let skip = rest.len() - rest.trim_start().len();
        pos += skip;
        if pos >= text.len() {
            break;
        }
        if !text[pos..].starts_with('{') {
            return Err(Diagnostic::error(
                "E001",
                span_in(line, pos, text.len()),
                "expected `{` after percept sentence",
            ));
        }
        let close = closing(text, pos, '}')
            .ok_or_else(|| Diagnostic::error("E001", span_in(line, pos, text.len()), "unterminated `{`"))?;
        let inner = &text[pos + 1..close];
        if inner.trim_start().starts_with('[') {
            if out.activation.is_some() {
                return Err(Diagnostic::error(
                    "E001",
                    span_in(line, pos, close + 1),
                    "duplicate percept annotation",
                ));
            }
            parse_annotation(line, pos + 1, inner, &mut out)?;
        } else {
            if out.reward.is_some() {
                return Err(Diagnostic::error("E001", span_in(line, pos, close + 1), "duplicate reward"));
            }
            out.reward = Some(parse_reward(line, pos, inner)?);
        }
        pos = close + 1;
    }
    Ok(out)
}

fn parse_annotation(line: &SourceLine, base: usize, inner: &str, out: &mut PerceptLine) -> Result<(), Diagnostic> {
    let items = split_top(inner);
    let item = |i: usize| {
        let (s, e) = items[i];
        let raw = &inner[s..e];
        let lead = raw.len() - raw.trim_start().len();
        let t = raw.trim();
        let start = base + s + lead;
        match t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            Some(body) => Ok((start, body)),
            None => Err(Diagnostic::error(
                "E001",
                span_in(line, start, start + t.len()),
                format!("expected `[...]`, found `{t}`"),
            )),
        }
    };
    if !(2..=3).contains(&items.len()) {
        return Err(Diagnostic::error(
            "E001",
            span_in(line, base, base + inner.len()),
            "expected `{[conditions],[p,mu,sigma]}` with an optional deactivation triple",
        ));
    }
    let (cstart, conds) = item(0)?;
    if !conds.trim().is_empty() {
        for (s, e) in split_top(conds) {
            let raw = &conds[s..e];
            let name = belief_text(raw);
            if name.is_empty() {
                return Err(Diagnostic::error(
                    "E001",
                    span_in(line, cstart + 1 + s, cstart + 1 + e),
                    "empty condition",
                ));
            }
            out.conditions
                .push((name.to_string(), span_in(line, cstart + 1 + s, cstart + 1 + e)));
        }
    }
    let (s1, t1) = item(1)?;
    out.activation = Some(parse_triple(line, s1, t1)?);
    if items.len() == 3 {
        let (s2, t2) = item(2)?;
        out.deactivation = Some(parse_triple(line, s2, t2)?);
    }
    Ok(())
}

struct FeedbackItem {
    name: String,
    span: Span,
    triple: Triple,
}

/// Reward value and where it was written.
type Reward = (f64, Span);

/// Parses `name[p,μ,σ]` / `^[Name][p,μ,σ]` items and an optional trailing
/// `{r}` starting at byte `pos` of `line`.
fn parse_feedback_items(line: &SourceLine, mut pos: usize) -> Result<(Vec<FeedbackItem>, Option<Reward>), Diagnostic> {
    let text = line.text.as_str();
    let mut items = Vec::new();
    let mut reward = None;
    loop {
        let rest = &text[pos..];
        pos += rest.len() - rest.trim_start().len();
        if pos >= text.len() {
            break;
        }
        if reward.is_some() {
            return Err(Diagnostic::error(
                "E001",
                span_in(line, pos, text.len()),
                "unexpected text after reward",
            ));
        }
        let rest = &text[pos..];
        if rest.starts_with('{') {
            let close = closing(text, pos, '}')
                .ok_or_else(|| Diagnostic::error("E001", span_in(line, pos, text.len()), "unterminated `{`"))?;
            reward = Some(parse_reward(line, pos, &text[pos + 1..close])?);
            pos = close + 1;
            continue;
        }
        let (name, name_end) = if rest.starts_with("^[") {
            let close = closing(text, pos + 1, ']')
                .ok_or_else(|| Diagnostic::error("E001", span_in(line, pos, text.len()), "unterminated `^[`"))?;
            (sentence(&text[pos + 2..close]).to_string(), close + 1)
        } else {
            let len = rest
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(rest.len());
            if len == 0 {
                return Err(Diagnostic::error(
                    "E001",
                    span_in(line, pos, pos + rest.chars().next().map_or(0, char::len_utf8)),
                    "expected a feedback atom, `^[...]` or `{reward}`",
                ));
            }
            (rest[..len].to_string(), pos + len)
        };
        let span = span_in(line, pos, name_end);
        if !text[name_end..].starts_with('[') {
            return Err(Diagnostic::error(
                "E001",
                span_in(line, name_end, name_end + 1),
                format!("expected `[p,mu,sigma]` after feedback `{name}`"),
            ));
        }
        let close = closing(text, name_end, ']')
            .ok_or_else(|| Diagnostic::error("E001", span_in(line, name_end, text.len()), "unterminated `[`"))?;
        let triple = parse_triple(line, name_end, &text[name_end + 1..close])?;
        if crate::agent_model::sanitize_identifier(&name).is_empty() {
            return Err(Diagnostic::error("E001", span, "empty feedback atom name"));
        }
        items.push(FeedbackItem { name, span, triple });
        pos = close + 1;
    }
    Ok((items, reward))
}

fn check_feedback_sum(items: &[FeedbackItem], action: &str, span: Span) -> Result<(), Diagnostic> {
    let sum: f64 = items.iter().map(|i| i.triple.db.p).sum();
    if sum > 1.0 + 1e-12 {
        return Err(Diagnostic::error(
            "E007",
            span,
            format!("feedback probabilities of `{action}` sum to {sum} > 1"),
        ));
    }
    Ok(())
}

/// Parses the feedback list of an action declaration, e.g.
/// `continue[0.6,5,0] abort[0.4,5,0]`, into sanitized atom names and their
/// annotations. Probabilities must sum to at most 1; the remainder is the
/// "no feedback" outcome.
pub fn parse_action_feedback(text: &str) -> Result<Vec<(String, DelayedBernoulli)>, Diagnostic> {
    let line = SourceLine {
        number: 1,
        col: 1,
        text: text.to_string(),
    };
    let (items, _) = parse_feedback_items(&line, 0)?;
    check_feedback_sum(&items, "action", whole(&line))?;
    Ok(items
        .into_iter()
        .map(|i| (crate::agent_model::sanitize_identifier(&i.name), i.triple.db))
        .collect())
}

struct ActionLine {
    source: String,
    span: Span,
    feedback: Vec<FeedbackItem>,
    reward: Option<(f64, Span)>,
}

fn parse_action_line(line: &SourceLine) -> Result<ActionLine, Diagnostic> {
    let text = line.text.as_str();
    let (source, name_end, rest_start) = if text.starts_with('[') {
        let close =
            closing(text, 0, ']').ok_or_else(|| Diagnostic::error("E001", whole(line), "unterminated `[`"))?;
        let after = if text[close + 1..].starts_with('.') { close + 2 } else { close + 1 };
        (sentence(&text[1..close]), close + 1, after)
    } else {
        let dot = text
            .char_indices()
            .find(|&(i, c)| c == '.' && text[i + 1..].chars().next().is_none_or(char::is_whitespace))
            .map(|(i, _)| i)
            .ok_or_else(|| Diagnostic::error("E001", whole(line), "expected `.` after the action sentence"))?;
        (sentence(&text[..dot]), dot, dot + 1)
    };
    if !source.chars().any(|c| c.is_ascii_alphanumeric()) {
        return Err(Diagnostic::error("E001", whole(line), "expected an action sentence"));
    }
    let (feedback, reward) = parse_feedback_items(line, rest_start)?;
    Ok(ActionLine {
        source: source.to_string(),
        span: span_in(line, 0, name_end),
        feedback,
        reward,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Belief { text: String, negated: bool },
    Bracket(String),
    Word(String),
    Number(f64),
    Plus,
    Minus,
    LParen,
    RParen,
    Comma,
    Semi,
    Dot,
    LBrace,
    RBrace,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Belief { text, negated } => format!("`{}^[{text}]`", if *negated { "~" } else { "" }),
            Tok::Bracket(t) => format!("`[{t}]`"),
            Tok::Word(w) => format!("`{w}`"),
            Tok::Number(n) => format!("`{n}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Dot => "`.`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn lex(lines: &[SourceLine]) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    for line in lines {
        let text = line.text.as_str();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let c = rest.chars().next().unwrap_or(' ');
            if c.is_whitespace() {
                pos += c.len_utf8();
                continue;
            }
            let start = pos;
            let bracketed = |from: usize| {
                closing(text, from, ']').ok_or_else(|| {
                    Diagnostic::error("E001", span_in(line, start, text.len()), "unterminated `[`")
                })
            };
            let tok = if rest.starts_with("^[") || rest.starts_with("~^[") {
                let negated = c == '~';
                let open = if negated { pos + 2 } else { pos + 1 };
                let close = bracketed(open)?;
                pos = close + 1;
                Tok::Belief {
                    text: text[open + 1..close].to_string(),
                    negated,
                }
            } else if c == '[' {
                let close = bracketed(pos)?;
                pos = close + 1;
                Tok::Bracket(text[start + 1..close].to_string())
            } else if c.is_ascii_digit() {
                let mut end = pos + rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
                if text[end..].starts_with('.') && text[end + 1..].starts_with(|c: char| c.is_ascii_digit()) {
                    let frac = &text[end + 1..];
                    end += 1 + frac.find(|c: char| !c.is_ascii_digit()).unwrap_or(frac.len());
                }
                pos = end;
                Tok::Number(text[start..end].parse().unwrap_or(f64::NAN))
            } else if c.is_ascii_alphabetic() || c == '_' {
                let len = rest
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                    .unwrap_or(rest.len());
                pos += len;
                Tok::Word(rest[..len].to_string())
            } else {
                pos += c.len_utf8();
                match c {
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    '.' => Tok::Dot,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    _ => {
                        return Err(Diagnostic::error(
                            "E001",
                            span_in(line, start, pos),
                            format!("unexpected character `{c}`"),
                        ))
                    }
                }
            };
            out.push(Token {
                tok,
                span: span_in(line, start, pos),
            });
        }
    }
    Ok(out)
}

struct Toks {
    toks: Vec<Token>,
    pos: usize,
    end: Span,
}

impl Toks {
    fn new(section: &Section) -> Result<Self, Diagnostic> {
        let toks = lex(&section.lines)?;
        let end = toks.last().map_or(section.header, |t| Span {
            line: t.span.line,
            col: t.span.col + t.span.len,
            len: 0,
        });
        Ok(Toks { toks, pos: 0, end })
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += usize::from(t.is_some());
        t
    }

    fn is(&self, tok: &Tok) -> bool {
        self.peek().is_some_and(|t| &t.tok == tok)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w.eq_ignore_ascii_case(kw))
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        let hit = self.is(tok);
        self.pos += usize::from(hit);
        hit
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.is_kw(kw);
        self.pos += usize::from(hit);
        hit
    }

    fn here(&self) -> Span {
        self.peek().map_or(self.end, |t| t.span)
    }

    fn error(&self, expected: &str) -> Diagnostic {
        let found = self.peek().map_or("end of section".to_string(), |t| t.tok.describe());
        Diagnostic::error("E001", self.here(), format!("expected {expected}, found {found}"))
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, Diagnostic> {
        if self.is(&tok) {
            Ok(self.bump().map(|t| t.span).unwrap_or(self.end))
        } else {
            Err(self.error(&tok.describe()))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), Diagnostic> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&format!("`{kw}`")))
        }
    }

    /// Whether the next token starts a new source line.
    fn on_new_line(&self) -> bool {
        match (self.pos.checked_sub(1).and_then(|i| self.toks.get(i)), self.peek()) {
            (Some(prev), Some(next)) => next.span.line != prev.span.line,
            _ => false,
        }
    }

    /// Skips to the token after the next `.`, for error recovery.
    fn recover(&mut self) {
        while let Some(t) = self.bump() {
            if t.tok == Tok::Dot {
                break;
            }
        }
    }
}

struct Builder {
    spec: AgentSpec,
    by_name: HashMap<String, BeliefId>,
    spans: Vec<Span>,
    referenced: Vec<bool>,
    set: Vec<bool>,
    action_spans: Vec<Span>,
    invoked: Vec<bool>,
    diags: Vec<Diagnostic>,
    interrupts: Vec<(usize, Span)>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            spec: AgentSpec::default(),
            by_name: HashMap::new(),
            spans: Vec::new(),
            referenced: Vec::new(),
            set: Vec::new(),
            action_spans: Vec::new(),
            invoked: Vec::new(),
            diags: Vec::new(),
            interrupts: Vec::new(),
        }
    }

    fn push_belief(&mut self, name: String, source: &str, kind: BeliefKind, span: Span) -> BeliefId {
        let id = BeliefId(self.spec.beliefs.len() as u16);
        self.spec.beliefs.push(BeliefAtom {
            name: name.clone(),
            kind,
            source: source.to_string(),
        });
        self.by_name.insert(name, id);
        self.spans.push(span);
        self.referenced.push(false);
        self.set.push(false);
        id
    }

    fn name_of(source: &str, span: Span) -> Result<String, Diagnostic> {
        let name = crate::agent_model::sanitize_identifier(source);
        if name.is_empty() {
            Err(Diagnostic::error("E001", span, format!("`{source}` is not a valid belief name")))
        } else {
            Ok(name)
        }
    }

    /// Declares a percept or feedback atom; names must be fresh.
    fn declare(&mut self, source: &str, kind: BeliefKind, span: Span) -> Result<BeliefId, Diagnostic> {
        let name = Self::name_of(source, span)?;
        if let Some(&id) = self.by_name.get(&name) {
            let prev = self.spans[id.index()];
            return Err(Diagnostic::error(
                "E004",
                span,
                format!(
                    "duplicate declaration of `{name}` (first declared as a {} belief at line {})",
                    self.spec.belief(id).kind,
                    prev.line
                ),
            ));
        }
        Ok(self.push_belief(name, source, kind, span))
    }

    /// Resolves a reference, interning unknown names as mental notes.
    fn reference(&mut self, source: &str, span: Span) -> Result<BeliefId, Diagnostic> {
        let source = sentence(source);
        let name = Self::name_of(source, span)?;
        Ok(match self.by_name.get(&name) {
            Some(&id) => id,
            None => self.push_belief(name, source, BeliefKind::Mental, span),
        })
    }

    /// Resolves a belief that must be a mental note (note ops, rule heads,
    /// skill targets).
    fn mental(&mut self, source: &str, span: Span, context: &str) -> Result<BeliefId, Diagnostic> {
        let id = self.reference(source, span)?;
        let b = self.spec.belief(id);
        if b.kind != BeliefKind::Mental {
            return Err(Diagnostic::error(
                "E009",
                span,
                format!("{context}: `{}` is a {} belief, not a mental note", b.name, b.kind),
            ));
        }
        self.set[id.index()] = true;
        Ok(id)
    }

    fn run<T>(&mut self, r: Result<T, Diagnostic>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(d) => {
                self.diags.push(d);
                None
            }
        }
    }

    fn context(&mut self, t: &mut Toks) -> Result<ContextFormula, Diagnostic> {
        let mut items = vec![self.conjunction(t)?];
        while t.eat_kw("or") {
            items.push(self.conjunction(t)?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap_or(ContextFormula::True)
        } else {
            ContextFormula::Or(items)
        })
    }

    fn conjunction(&mut self, t: &mut Toks) -> Result<ContextFormula, Diagnostic> {
        let mut items = vec![self.unary(t)?];
        while t.eat_kw("and") {
            items.push(self.unary(t)?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap_or(ContextFormula::True)
        } else {
            ContextFormula::And(items)
        })
    }

    fn unary(&mut self, t: &mut Toks) -> Result<ContextFormula, Diagnostic> {
        if t.eat_kw("not") {
            return Ok(ContextFormula::Not(Box::new(self.unary(t)?)));
        }
        if t.eat_kw("true") {
            return Ok(ContextFormula::True);
        }
        if t.eat(&Tok::LParen) {
            let inner = self.context(t)?;
            t.expect(Tok::RParen)?;
            return Ok(inner);
        }
        match t.peek().cloned() {
            Some(Token {
                tok: Tok::Belief { text, negated },
                span,
            }) => {
                t.bump();
                let id = self.reference(&text, span)?;
                self.referenced[id.index()] = true;
                Ok(ContextFormula::Lit(Literal { atom: id, negated }))
            }
            _ => Err(t.error("a belief `^[...]`, `~^[...]`, `true`, `not` or `(`")),
        }
    }

    fn reward_suffix(t: &mut Toks) -> Result<Option<f64>, Diagnostic> {
        if !t.eat(&Tok::LBrace) {
            return Ok(None);
        }
        let span = t.here();
        let r = match t.bump() {
            Some(Token {
                tok: Tok::Number(r), ..
            }) if r.is_finite() => r,
            _ => return Err(Diagnostic::error("E005", span, "reward must be a non-negative number")),
        };
        t.expect(Tok::RBrace)?;
        Ok(Some(r))
    }

    fn step(&mut self, t: &mut Toks, context: &str) -> Result<BodyStep, Diagnostic> {
        let Some(tok) = t.peek().cloned() else {
            return Err(t.error("a plan step"));
        };
        let action = match tok.tok {
            Tok::Bracket(text) => {
                t.bump();
                let name = crate::agent_model::sanitize_identifier(sentence(&text));
                let id = self.spec.action_id(&name).ok_or_else(|| {
                    Diagnostic::error("E006", tok.span, format!("undeclared action `{}`", sentence(&text)))
                })?;
                self.invoked[id.index()] = true;
                StepAction::External(id)
            }
            Tok::Plus | Tok::Minus => {
                t.bump();
                let add = tok.tok == Tok::Plus;
                match t.bump() {
                    Some(Token {
                        tok: Tok::Belief { text, negated: false },
                        span,
                    }) => StepAction::Note {
                        atom: self.mental(&text, span, context)?,
                        add,
                    },
                    _ => {
                        t.pos -= 1;
                        return Err(t.error("a belief `^[...]` after the note operator"));
                    }
                }
            }
            Tok::Word(ref w) if w.eq_ignore_ascii_case("interrupt") => {
                t.bump();
                t.expect(Tok::LParen)?;
                let span = t.here();
                let n = match t.bump().map(|t| t.tok) {
                    Some(Tok::Number(n)) if n.fract() == 0.0 && n >= 1.0 => n as usize,
                    Some(Tok::Word(w)) => w
                        .strip_prefix("plan_")
                        .and_then(|n| n.parse().ok())
                        .filter(|n| *n >= 1)
                        .ok_or_else(|| Diagnostic::error("E001", span, "expected a plan number"))?,
                    _ => return Err(Diagnostic::error("E001", span, "expected a plan number")),
                };
                t.expect(Tok::RParen)?;
                self.interrupts.push((n, span));
                StepAction::Interrupt(PlanId((n - 1).min(u16::MAX as usize) as u16))
            }
            _ => return Err(t.error("`[Action.]`, `+^[...]`, `-^[...]` or `interrupt(N)`")),
        };
        let reward = Self::reward_suffix(t)?;
        Ok(BodyStep { action, reward })
    }

    fn percepts(&mut self, section: &Section) -> Vec<PerceptLine> {
        let mut lines = Vec::new();
        for line in &section.lines {
            let Some(mut p) = self.run(parse_percept_line(line)) else {
                continue;
            };
            let text = &line.text[..line.text.find('{').unwrap_or(line.text.len())];
            let r = self.declare_percept(sentence(text), p.span);
            p.id = self.run(r);
            lines.push(p);
        }
        lines
    }

    fn declare_percept(&mut self, source: &str, span: Span) -> Result<BeliefId, Diagnostic> {
        self.declare(source, BeliefKind::Sensory, span)
    }

    fn actions(&mut self, section: &Section) {
        for line in &section.lines {
            let Some(a) = self.run(parse_action_line(line)) else {
                continue;
            };
            let name = match Self::name_of(&a.source, a.span) {
                Ok(n) => n,
                Err(d) => {
                    self.diags.push(d);
                    continue;
                }
            };
            if let Some(prev) = self.spec.action_id(&name) {
                self.diags.push(Diagnostic::error(
                    "E004",
                    a.span,
                    format!(
                        "duplicate action `{name}` (first declared at line {})",
                        self.action_spans[prev.index()].line
                    ),
                ));
                continue;
            }
            if let Err(d) = check_feedback_sum(&a.feedback, &name, a.span) {
                self.diags.push(d);
            }
            let mut outcomes = Vec::new();
            for item in &a.feedback {
                let r = self.declare_feedback(&item.name, item.span);
                if let Some(id) = self.run(r) {
                    outcomes.push((id, item.triple.db));
                }
            }
            self.spec.actions.push(ActionDecl {
                name,
                source: a.source,
                feedback: FeedbackOutcome { outcomes },
                reward: a.reward.map(|r| r.0),
            });
            self.action_spans.push(a.span);
            self.invoked.push(false);
        }
    }

    fn declare_feedback(&mut self, source: &str, span: Span) -> Result<BeliefId, Diagnostic> {
        self.declare(source, BeliefKind::Feedback, span)
    }

    fn finish_percepts(&mut self, lines: Vec<PerceptLine>) {
        for p in lines {
            let Some(atom) = p.id else { continue };
            let mut condition = Vec::new();
            for (text, span) in &p.conditions {
                let r = self.reference(text, *span);
                if let Some(id) = self.run(r) {
                    self.referenced[id.index()] = true;
                    if id == atom {
                        self.diags.push(Diagnostic::error(
                            "E012",
                            *span,
                            "a percept cannot be conditioned on itself",
                        ));
                    } else if !condition.contains(&id) {
                        condition.push(id);
                    }
                }
            }
            match p.activation {
                Some(act) => {
                    let (deactivation, explicit) = match p.deactivation {
                        Some(d) => (d.db, true),
                        None => (act.db, false),
                    };
                    self.spec.percepts.push(PerceptDynamics {
                        atom,
                        condition,
                        activation: act.db,
                        deactivation,
                        explicit_deactivation: explicit,
                    });
                }
                None => self.diags.push(Diagnostic::warning(
                    "W002",
                    p.span,
                    format!(
                        "percept `{}` has no annotation and keeps its initial value",
                        self.spec.belief(atom).name
                    ),
                )),
            }
            if let Some((value, _)) = p.reward {
                self.spec.rewards.push(RewardDecl {
                    target: RewardTarget::Belief(atom),
                    value,
                });
                self.referenced[atom.index()] = true;
            }
        }
    }

    fn initial_beliefs(&mut self, section: &Section) {
        for line in &section.lines {
            let refs: Vec<(String, Span)> = if line.text.contains("^[") {
                match lex(std::slice::from_ref(line)) {
                    Ok(toks) => {
                        let mut out = Vec::new();
                        for t in toks {
                            match t.tok {
                                Tok::Belief { text, negated: false } => out.push((text, t.span)),
                                Tok::Comma | Tok::Dot | Tok::Semi => {}
                                other => self.diags.push(Diagnostic::error(
                                    "E001",
                                    t.span,
                                    format!("expected a belief `^[...]`, found {}", other.describe()),
                                )),
                            }
                        }
                        out
                    }
                    Err(d) => {
                        self.diags.push(d);
                        continue;
                    }
                }
            } else {
                vec![(line.text.clone(), whole(line))]
            };
            for (text, span) in refs {
                let r = self.reference(&text, span);
                if let Some(id) = self.run(r) {
                    self.spec.initial_beliefs.set(id, true);
                    self.set[id.index()] = true;
                }
            }
        }
    }

    fn initial_actions(&mut self, section: &Section) {
        let Some(mut t) = self.run(Toks::new(section)) else {
            return;
        };
        while !t.at_end() {
            match self.step(&mut t, "initial actions") {
                Ok(step) => self.spec.initial_actions.push(step),
                Err(d) => {
                    self.diags.push(d);
                    t.recover();
                    continue;
                }
            }
            if !(t.eat(&Tok::Comma) || t.eat(&Tok::Semi) || t.eat(&Tok::Dot)) && !t.at_end() && !t.on_new_line() {
                self.diags.push(t.error("`,` or a new line between steps"));
                t.recover();
            }
        }
    }

    fn rules(&mut self, section: &Section) {
        let Some(mut t) = self.run(Toks::new(section)) else {
            return;
        };
        while !t.at_end() {
            let label = format!("rule {}", self.spec.rules.len() + 1);
            match self.rule(&mut t, &label) {
                Ok(rule) => self.spec.rules.push(rule),
                Err(d) => {
                    self.diags.push(d);
                    t.recover();
                }
            }
        }
    }

    fn rule(&mut self, t: &mut Toks, label: &str) -> Result<LogicRule, Diagnostic> {
        t.expect_kw("if")?;
        let antecedent = self.context(t)?;
        t.expect_kw("then")?;
        let mut consequent = Vec::new();
        loop {
            let add = if t.eat(&Tok::Minus) {
                false
            } else {
                t.eat(&Tok::Plus);
                true
            };
            match t.bump() {
                Some(Token {
                    tok: Tok::Belief { text, negated: false },
                    span,
                }) => {
                    let id = self.mental(&text, span, label)?;
                    consequent.push(if add { Literal::pos(id) } else { Literal::neg(id) });
                }
                _ => {
                    t.pos -= 1;
                    return Err(t.error("`+^[...]` or `-^[...]`"));
                }
            }
            if !t.eat(&Tok::Comma) {
                break;
            }
        }
        t.expect(Tok::Dot)?;
        Ok(LogicRule { antecedent, consequent })
    }

    fn plans(&mut self, section: &Section) {
        let Some(mut t) = self.run(Toks::new(section)) else {
            return;
        };
        if t.at_end() {
            self.diags
                .push(Diagnostic::error("E008", section.header, "no plans declared"));
            return;
        }
        while !t.at_end() {
            match self.plan(&mut t) {
                Ok(plan) => self.spec.plans.push(plan),
                Err(d) => {
                    self.diags.push(d);
                    t.recover();
                    // Keep numbering stable so later interrupts resolve.
                    self.spec.plans.push(Plan {
                        id: PlanId(self.spec.plans.len() as u16),
                        trigger: Event::added(BeliefId(0)),
                        context: ContextFormula::True,
                        body: Vec::new(),
                    });
                }
            }
        }
    }

    fn plan(&mut self, t: &mut Toks) -> Result<Plan, Diagnostic> {
        let id = PlanId(self.spec.plans.len() as u16);
        let label = id.to_string();
        t.expect_kw("if")?;
        let removed = if t.eat(&Tok::Minus) {
            true
        } else {
            t.eat(&Tok::Plus);
            false
        };
        let trigger = match t.bump() {
            Some(Token {
                tok: Tok::Belief { text, negated },
                span,
            }) if !(removed && negated) => {
                let atom = self.reference(&text, span)?;
                self.referenced[atom.index()] = true;
                if removed || negated {
                    Event::removed(atom)
                } else {
                    Event::added(atom)
                }
            }
            _ => {
                t.pos -= 1;
                return Err(t.error("a triggering belief `^[...]` or `~^[...]`"));
            }
        };
        let context = if t.eat_kw("while") {
            self.context(t)?
        } else {
            ContextFormula::True
        };
        t.expect_kw("then")?;
        let mut body = Vec::new();
        loop {
            body.push(self.step(t, &label)?);
            if t.eat(&Tok::Dot) {
                break;
            }
            if t.eat(&Tok::Comma) || t.eat(&Tok::Semi) {
                continue;
            }
            if t.at_end() || !t.on_new_line() || t.is_kw("if") {
                return Err(t.error("`.` to end the plan or a further step"));
            }
        }
        Ok(Plan {
            id,
            trigger,
            context,
            body,
        })
    }

    fn rewards(&mut self, section: &Section) {
        for line in &section.lines {
            if let Err(d) = self.reward_line(line) {
                self.diags.push(d);
            }
        }
    }

    fn reward_line(&mut self, line: &SourceLine) -> Result<(), Diagnostic> {
        let text = line.text.as_str();
        let open = text
            .rfind('{')
            .ok_or_else(|| Diagnostic::error("E001", whole(line), "expected `{reward}`"))?;
        let close = closing(text, open, '}')
            .ok_or_else(|| Diagnostic::error("E001", span_in(line, open, text.len()), "unterminated `{`"))?;
        if !text[close + 1..].trim().is_empty() {
            return Err(Diagnostic::error(
                "E001",
                span_in(line, close + 1, text.len()),
                "unexpected text after reward",
            ));
        }
        let (value, _) = parse_reward(line, open, &text[open + 1..close])?;
        let target_text = text[..open].trim();
        let span = span_in(line, 0, target_text.len());
        let target = if let Some(inner) = target_text.strip_prefix("^[").and_then(|r| r.strip_suffix(']')) {
            RewardTarget::Belief(self.existing_belief(inner, span)?)
        } else if let Some(inner) = target_text.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = crate::agent_model::sanitize_identifier(sentence(inner));
            let id = self
                .spec
                .action_id(&name)
                .ok_or_else(|| Diagnostic::error("E006", span, format!("undeclared action `{}`", sentence(inner))))?;
            RewardTarget::Action(id)
        } else {
            RewardTarget::Belief(self.existing_belief(target_text, span)?)
        };
        self.spec.rewards.push(RewardDecl { target, value });
        Ok(())
    }

    fn existing_belief(&mut self, text: &str, span: Span) -> Result<BeliefId, Diagnostic> {
        let name = crate::agent_model::sanitize_identifier(sentence(text));
        let id = *self
            .by_name
            .get(&name)
            .ok_or_else(|| Diagnostic::error("E012", span, format!("reward on unknown belief `{}`", sentence(text))))?;
        self.referenced[id.index()] = true;
        Ok(id)
    }

    /// Skills and cadence are processed before selectors so that belief
    /// interning does not depend on how the two kinds of lines interleave.
    fn runtime(&mut self, section: &Section) {
        let is_select = |l: &&SourceLine| l.text.get(..6).is_some_and(|k| k.eq_ignore_ascii_case("select"));
        let (select, other): (Vec<&SourceLine>, Vec<&SourceLine>) = section.lines.iter().partition(is_select);
        for line in other.into_iter().chain(select) {
            if let Err(d) = self.runtime_line(line) {
                self.diags.push(d);
            }
        }
    }

    fn query_at(&mut self, line: &SourceLine, start: usize, text: &str) -> Result<Query, Diagnostic> {
        let lead = text.len() - text.trim_start().len();
        let q = parse_query(text.trim()).map_err(|e| {
            let at = start + lead + e.offset;
            Diagnostic::error("E011", span_in(line, at, at + 1), format!("invalid query: {}", e.message))
        })?;
        if matches!(q, Query::State(_)) {
            return Err(Diagnostic::error(
                "E011",
                span_in(line, start, start + text.len()),
                "expected a quantitative query such as `P=? [ ... ]`",
            ));
        }
        for var in q.variables() {
            if let Some(&id) = self.by_name.get(&var) {
                self.referenced[id.index()] = true;
            }
        }
        Ok(q)
    }

    fn runtime_line(&mut self, line: &SourceLine) -> Result<(), Diagnostic> {
        let text = line.text.as_str();
        let kw_len = text.find(char::is_whitespace).unwrap_or(text.len());
        let kw = text[..kw_len].to_ascii_lowercase();
        let rest = &text[kw_len..];
        match kw.as_str() {
            "cadence" => {
                let n: u32 = rest
                    .trim()
                    .parse()
                    .ok()
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| Diagnostic::error("E011", whole(line), "cadence must be a positive integer"))?;
                if self.spec.runtime.cadence.replace(n).is_some() {
                    return Err(Diagnostic::error("E011", whole(line), "duplicate cadence"));
                }
                Ok(())
            }
            "skill" => {
                let arrow = text
                    .rfind("->")
                    .ok_or_else(|| Diagnostic::error("E011", whole(line), "expected `-> ^[target]`"))?;
                let target_text = text[arrow + 2..].trim();
                let target_start = arrow + 2 + (text[arrow + 2..].len() - text[arrow + 2..].trim_start().len());
                let tspan = span_in(line, target_start, text.len());
                let inner = target_text
                    .strip_prefix("^[")
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| Diagnostic::error("E011", tspan, "skill target must be a belief `^[...]`"))?;
                let target = self.mental(inner, tspan, "skill target")?;
                let head = &text[kw_len..arrow];
                let head = head.trim_end();
                let words: Vec<(usize, &str)> = head
                    .split_whitespace()
                    .map(|w| (w.as_ptr() as usize - text.as_ptr() as usize, w))
                    .collect();
                if words.len() < 3 {
                    return Err(Diagnostic::error(
                        "E011",
                        whole(line),
                        "expected `skill <query> <cmp> <threshold> -> ^[target]`",
                    ));
                }
                let (ts, thr_text) = words[words.len() - 1];
                let (cs, cmp_text) = words[words.len() - 2];
                let cmp = match cmp_text {
                    "<" => Comparison::Lt,
                    "<=" => Comparison::Le,
                    ">" => Comparison::Gt,
                    ">=" => Comparison::Ge,
                    _ => {
                        return Err(Diagnostic::error(
                            "E011",
                            span_in(line, cs, cs + cmp_text.len()),
                            format!("expected `<`, `<=`, `>` or `>=`, found `{cmp_text}`"),
                        ))
                    }
                };
                let threshold: f64 = thr_text.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                    Diagnostic::error(
                        "E011",
                        span_in(line, ts, ts + thr_text.len()),
                        format!("invalid threshold `{thr_text}`"),
                    )
                })?;
                let query = self.query_at(line, kw_len, &text[kw_len..cs])?;
                if matches!(query, Query::Prob { .. }) && !(0.0..=1.0).contains(&threshold) {
                    return Err(Diagnostic::error(
                        "E011",
                        span_in(line, ts, ts + thr_text.len()),
                        format!("probability threshold {threshold} outside [0,1]"),
                    ));
                }
                self.spec.runtime.skills.push(SkillDecl {
                    query,
                    cmp,
                    threshold,
                    target,
                });
                Ok(())
            }
            "select" => {
                let mut pos = kw_len;
                let skip_ws = |pos: usize| pos + (text[pos..].len() - text[pos..].trim_start().len());
                pos = skip_ws(pos);
                let mut event = None;
                if text[pos..].to_ascii_lowercase().starts_with("on ") {
                    pos = skip_ws(pos + 2);
                    let sign_start = pos;
                    let removed = if text[pos..].starts_with('-') {
                        pos += 1;
                        true
                    } else {
                        if text[pos..].starts_with('+') {
                            pos += 1;
                        }
                        false
                    };
                    let negated = text[pos..].starts_with("~^[");
                    let open = if negated { pos + 2 } else { pos + 1 };
                    if !text[pos..].starts_with("^[") && !negated {
                        return Err(Diagnostic::error(
                            "E011",
                            span_in(line, sign_start, sign_start + 1),
                            "expected a triggering belief after `on`",
                        ));
                    }
                    let close = closing(text, open, ']')
                        .ok_or_else(|| Diagnostic::error("E001", span_in(line, pos, text.len()), "unterminated `[`"))?;
                    let span = span_in(line, sign_start, close + 1);
                    let atom = self.reference(&text[open + 1..close], span)?;
                    self.referenced[atom.index()] = true;
                    event = Some(if removed || negated {
                        Event::removed(atom)
                    } else {
                        Event::added(atom)
                    });
                    pos = skip_ws(close + 1);
                }
                let dir_len = text[pos..].find(char::is_whitespace).unwrap_or(text.len() - pos);
                let direction = match text[pos..pos + dir_len].to_ascii_lowercase().as_str() {
                    "maximize" | "maximise" | "max" => Direction::Maximize,
                    "minimize" | "minimise" | "min" => Direction::Minimize,
                    other => {
                        return Err(Diagnostic::error(
                            "E011",
                            span_in(line, pos, pos + dir_len),
                            format!("expected `maximize` or `minimize`, found `{other}`"),
                        ))
                    }
                };
                let start = pos + dir_len;
                let objective = self.query_at(line, start, &text[start..])?;
                self.spec.runtime.selectors.push(SelectorDecl {
                    event,
                    objective,
                    direction,
                });
                Ok(())
            }
            _ => Err(Diagnostic::error(
                "E011",
                span_in(line, 0, kw_len),
                format!("expected `cadence`, `skill` or `select`, found `{}`", &text[..kw_len]),
            )),
        }
    }

    fn warnings(&mut self) {
        for (i, action) in self.spec.actions.iter().enumerate() {
            if self.invoked[i] {
                for (atom, _) in &action.feedback.outcomes {
                    self.referenced[atom.index()] = true;
                }
            }
        }
        for (i, b) in self.spec.beliefs.iter().enumerate() {
            if !self.referenced[i] {
                self.diags.push(Diagnostic::warning(
                    "W001",
                    self.spans[i],
                    format!("belief `{}` is never used", b.name),
                ));
            }
            if b.kind == BeliefKind::Mental && !self.set[i] {
                self.diags.push(Diagnostic::warning(
                    "W003",
                    self.spans[i],
                    format!("mental note `{}` is never set", b.name),
                ));
            }
        }
    }
}

pub(super) fn build(doc: &SourceDocument) -> Result<Parsed, ParseFailure> {
    let mut b = Builder::new();
    let get = |k| doc.section(k);
    let percepts = get(SectionKind::PerceptionProcess).map(|s| b.percepts(s)).unwrap_or_default();
    if let Some(s) = get(SectionKind::Actions) {
        b.actions(s);
    }
    b.finish_percepts(percepts);
    if let Some(s) = get(SectionKind::InitialBeliefs) {
        b.initial_beliefs(s);
    }
    if let Some(s) = get(SectionKind::InitialActions) {
        b.initial_actions(s);
    }
    if let Some(s) = get(SectionKind::LogicRules) {
        b.rules(s);
    }
    if let Some(s) = get(SectionKind::ExecutablePlans) {
        b.plans(s);
    }
    for &(n, span) in &b.interrupts {
        if n > b.spec.plans.len() {
            b.diags.push(Diagnostic::error(
                "E012",
                span,
                format!("interrupt of unknown plan {n} ({} plans declared)", b.spec.plans.len()),
            ));
        }
    }
    if let Some(s) = get(SectionKind::Rewards) {
        b.rewards(s);
    }
    if let Some(s) = get(SectionKind::RuntimeVerification) {
        b.runtime(s);
    }
    b.warnings();

    let has_errors = |b: &Builder| b.diags.iter().any(Diagnostic::is_error);
    if !has_errors(&b) {
        let anchor = get(SectionKind::ExecutablePlans).map_or(Span::default(), |s| s.header);
        if let Err(e) = b.spec.validate() {
            b.diags.push(Diagnostic::error("E010", anchor, e.to_string()));
        } else if let Err(e) = check_initial_closure(&b.spec) {
            let anchor = get(SectionKind::InitialBeliefs).map_or(anchor, |s| s.header);
            b.diags.push(Diagnostic::error("E010", anchor, e.to_string()));
        }
    }
    let mut diags = std::mem::take(&mut b.diags);
    diags.sort_by_key(|d| (d.severity, d.span.line, d.span.col));
    if diags.iter().any(Diagnostic::is_error) {
        return Err(ParseFailure { diagnostics: diags });
    }
    Ok(Parsed {
        spec: b.spec,
        warnings: diags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    const FRAGMENT: &str = "\
PERCEPTION PROCESS
Monitor the following booleans:
Sea state is too high. {[],[0.5,10,0]}
I am at global waypoint.
Areas left unexplored.
Last waypoint reached. {[I am at global waypoint],[1,1,0]}
ACTIONS
Activate park mode. ^[Park mode][1,1,0]
Wait for instructions. continue[0.6,5,0] abort[0.4,5,0]
EXECUTABLE PLANS
If ^[Sea state is too high] while true then
[Activate park mode.]
[Wait for instructions.]
+^[Waiting for instructions].
";

    #[test]
    fn percept_annotations() {
        let parsed = parse(FRAGMENT).unwrap();
        let s = &parsed.spec;
        let sea = s.belief_id("sea_state_is_too_high").unwrap();
        let p = s.percept_for(sea).unwrap();
        assert!(p.condition.is_empty());
        assert_eq!((p.activation.p, p.activation.mu, p.activation.sigma), (0.5, 10, 0));
        assert_eq!(p.deactivation, p.activation);
        assert!(!p.explicit_deactivation);
        let last = s.belief_id("last_waypoint_reached").unwrap();
        let wp = s.belief_id("i_am_at_global_waypoint").unwrap();
        assert_eq!(s.percept_for(last).unwrap().condition, vec![wp]);
        assert_eq!(s.beliefs[0].name, "sea_state_is_too_high");
        assert_eq!(s.belief(wp).kind, BeliefKind::Sensory);
        assert!(parsed.warnings.iter().any(|w| w.code == "W002"));
    }

    #[test]
    fn feedback_lists() {
        let fb = parse_action_feedback("continue[0.6,5,0] abort[0.4,5,0]").unwrap();
        assert_eq!(fb.len(), 2);
        assert_eq!(fb[0].0, "continue");
        assert_eq!((fb[1].1.p, fb[1].1.mu), (0.4, 5));
        let err = parse_action_feedback("a[0.7,2,0] b[0.5,2,0]").unwrap_err();
        assert_eq!(err.code, "E007");
        assert!(err.message.contains("1.2"));
        assert_eq!(parse_action_feedback("done[1,1,0]").unwrap()[0].1.p, 1.0);
    }

    #[test]
    fn plan_body_steps() {
        let s = parse(FRAGMENT).unwrap().spec;
        let plan = &s.plans[0];
        assert_eq!(plan.body.len(), 3);
        assert!(matches!(plan.body[0].action, StepAction::External(crate::agent_model::ActionId(0))));
        let note = s.belief_id("waiting_for_instructions").unwrap();
        assert_eq!(
            plan.body[2].action,
            StepAction::Note {
                atom: note,
                add: true
            }
        );
    }

    #[test]
    fn empty_plans_section() {
        let err = parse("PERCEPTION PROCESS\nA.\nEXECUTABLE PLANS\n").unwrap_err();
        let e = err.errors().next().unwrap();
        assert_eq!(e.code, "E008");
        assert_eq!(e.message, "no plans declared");
        assert_eq!(e.span.line, 3);
    }

    #[test]
    fn errors_are_positioned() {
        let text = "PERCEPTION PROCESS\nA. {[],[1.5,1,0]}\nEXECUTABLE PLANS\nIf ^[A] then [Missing.].\n";
        let err = parse(text).unwrap_err();
        let codes: Vec<&str> = err.errors().map(|d| d.code).collect();
        assert_eq!(codes, vec!["E005", "E006"]);
        let e = err.errors().next().unwrap();
        assert_eq!((e.span.line, e.span.col), (2, 8));
        let e = err.errors().nth(1).unwrap();
        assert_eq!((e.span.line, e.span.col), (4, 14));
    }

    #[test]
    fn syntax_error_reports_expectation() {
        let text = "PERCEPTION PROCESS\nA.\nEXECUTABLE PLANS\nIf ^[A] while and then +^[b].\n";
        let e = parse(text).unwrap_err();
        let d = e.errors().next().unwrap();
        assert_eq!(d.code, "E001");
        assert_eq!((d.span.line, d.span.col), (4, 15));
        assert!(d.message.contains("found `and`"), "{}", d.message);
    }

    #[test]
    fn duplicate_percept() {
        let text = "PERCEPTION PROCESS\nA.\nA.\nEXECUTABLE PLANS\nIf ^[A] then +^[b].\n";
        let e = parse(text).unwrap_err();
        assert_eq!(e.errors().next().unwrap().code, "E004");
    }

    #[test]
    fn mental_note_on_percept_is_rejected() {
        let text = "PERCEPTION PROCESS\nA.\nEXECUTABLE PLANS\nIf ^[A] then +^[A].\n";
        assert_eq!(parse(text).unwrap_err().errors().next().unwrap().code, "E009");
    }

    #[test]
    fn runtime_section() {
        let text = "PERCEPTION PROCESS\nGoal. {[],[0.5,2,0]}\nEXECUTABLE PLANS\nIf ^[Goal] then +^[done].\n\
RUNTIME VERIFICATION\ncadence 5\nskill P=? [ F<=50 goal=1 ] >= 0.9 -> ^[confident of success]\n\
select on ^[Goal] maximize Pmin=? [ F done=1 ]\n";
        let s = parse(text).unwrap().spec;
        assert_eq!(s.runtime.cadence, Some(5));
        let skill = &s.runtime.skills[0];
        assert_eq!(skill.cmp, Comparison::Ge);
        assert_eq!(skill.threshold, 0.9);
        assert_eq!(s.belief(skill.target).name, "confident_of_success");
        assert_eq!(s.runtime.selectors[0].event, Some(Event::added(BeliefId(0))));
        assert_eq!(s.runtime.selectors[0].objective.to_string(), "Pmin=? [ F done=1 ]");

        let bad = text.replace("0.9 ->", "1.9 ->");
        assert_eq!(parse(&bad).unwrap_err().errors().next().unwrap().code, "E011");
    }

    #[test]
    fn errors_inside_multibyte_text_have_whole_character_spans() {
        let text = "PERCEPTION PROCESS\nGoal. {[],[0.5,2,0]}\nEXECUTABLE PLANS\nIf ^[Goal] then +^[done].\n\
RUNTIME VERIFICATION\nselect maximize Pû [ F done=1 ]\n";
        let failure = parse(text).unwrap_err();
        let d = failure.errors().next().unwrap();
        assert_eq!(d.code, "E011");
        assert_eq!(d.span.line, 6);
        assert_eq!(d.span.len, 1);
    }

    #[test]
    fn rules_and_contexts() {
        let text = "PERCEPTION PROCESS\nA.\nB.\nLOGIC RULES\nIf ^[A] and not (^[B] or ~^[A]) then +^[m], -^[n].\n\
EXECUTABLE PLANS\nIf ~^[m] while ^[B] then -^[n] {2.5}.\n";
        let s = parse(text).unwrap().spec;
        assert_eq!(s.rules[0].consequent.len(), 2);
        assert!(matches!(&s.rules[0].antecedent, ContextFormula::And(v) if v.len() == 2));
        assert_eq!(s.plans[0].trigger, Event::removed(s.belief_id("m").unwrap()));
        assert_eq!(s.plans[0].body[0].reward, Some(2.5));
    }
}
