//! Textual agent-program format.
//!
//! A document is a sequence of sections introduced by upper-case headers:
//!
//! ```text
//! PERCEPTION PROCESS
//! Sea state is too high. {[],[0.5,10,0]}
//! Last waypoint reached. {[I am at global waypoint],[1,1,0]}
//! ACTIONS
//! Activate park mode. ^[Park mode][1,1,0]
//! EXECUTABLE PLANS
//! If ^[Sea state is too high] while true then
//! [Activate park mode.]
//! +^[Waiting for instructions].
//! ```
//!
//! `PERCEPTION PROCESS` and `EXECUTABLE PLANS` are mandatory. Optional
//! sections are `INITIAL BELIEFS`, `INITIAL ACTIONS`, `LOGIC RULES`,
//! `ACTIONS`, `REWARDS` and `RUNTIME VERIFICATION`. `//` starts a comment;
//! lines consisting of dots and lines ending in `:` are skipped.

mod parser;
mod printer;

use std::fmt;

use serde::Serialize;

use crate::agent_model::AgentSpec;

pub use parser::parse_action_feedback;
pub use printer::print;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One-based line and column (in characters) plus length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// `E001`..`E012` for errors, `W001`..`W003` for warnings.
    pub code: &'static str,
    pub message: String,
    pub span: Span,
}

impl Diagnostic {
    pub(crate) fn error(code: &'static str, span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message: message.into(),
            span,
        }
    }

    pub(crate) fn warning(code: &'static str, span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code,
            message: message.into(),
            span,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{sev}[{}] {}:{}: {}",
            self.code, self.span.line, self.span.col, self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectionKind {
    PerceptionProcess,
    Actions,
    InitialBeliefs,
    InitialActions,
    LogicRules,
    ExecutablePlans,
    Rewards,
    RuntimeVerification,
}

impl SectionKind {
    pub const ALL: [SectionKind; 8] = [
        SectionKind::PerceptionProcess,
        SectionKind::Actions,
        SectionKind::InitialBeliefs,
        SectionKind::InitialActions,
        SectionKind::LogicRules,
        SectionKind::ExecutablePlans,
        SectionKind::Rewards,
        SectionKind::RuntimeVerification,
    ];

    pub fn header(self) -> &'static str {
        match self {
            SectionKind::PerceptionProcess => "PERCEPTION PROCESS",
            SectionKind::Actions => "ACTIONS",
            SectionKind::InitialBeliefs => "INITIAL BELIEFS",
            SectionKind::InitialActions => "INITIAL ACTIONS",
            SectionKind::LogicRules => "LOGIC RULES",
            SectionKind::ExecutablePlans => "EXECUTABLE PLANS",
            SectionKind::Rewards => "REWARDS",
            SectionKind::RuntimeVerification => "RUNTIME VERIFICATION",
        }
    }

    fn from_header(line: &str) -> Option<Self> {
        let t = line.trim().trim_end_matches(':').trim_end();
        if t.chars().any(|c| c.is_lowercase()) {
            return None;
        }
        let words: Vec<&str> = t.split_whitespace().collect();
        Self::ALL
            .into_iter()
            .find(|k| k.header().split(' ').eq(words.iter().copied()))
    }
}

/// A content line with comments removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceLine {
    pub number: usize,
    /// Character column of the first character of `text`.
    pub col: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub kind: SectionKind,
    pub header: Span,
    pub lines: Vec<SourceLine>,
}

/// Document split into sections, in source order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceDocument {
    pub sections: Vec<Section>,
}

impl SourceDocument {
    pub fn section(&self, kind: SectionKind) -> Option<&Section> {
        self.sections.iter().find(|s| s.kind == kind)
    }

    /// Splits `text` into sections. Fails on content outside any section,
    /// duplicated sections and missing mandatory sections.
    pub fn split(text: &str) -> Result<Self, Vec<Diagnostic>> {
        let mut doc = SourceDocument::default();
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let number = i + 1;
            let code = raw.find("//").map_or(raw, |c| &raw[..c]);
            let trimmed = code.trim();
            if trimmed.is_empty() {
                continue;
            }
            let lead = code.len() - code.trim_start().len();
            let col = code[..lead].chars().count() + 1;
            let span = Span {
                line: number,
                col,
                len: trimmed.chars().count(),
            };
            if let Some(kind) = SectionKind::from_header(trimmed) {
                if doc.section(kind).is_some() {
                    errors.push(Diagnostic::error(
                        "E003",
                        span,
                        format!("duplicate section {}", kind.header()),
                    ));
                }
                doc.sections.push(Section {
                    kind,
                    header: span,
                    lines: Vec::new(),
                });
                continue;
            }
            if trimmed.chars().all(|c| c == '.') || trimmed.ends_with(':') {
                continue;
            }
            match doc.sections.last_mut() {
                Some(s) => s.lines.push(SourceLine {
                    number,
                    col,
                    text: trimmed.to_string(),
                }),
                None => errors.push(Diagnostic::error(
                    "E003",
                    span,
                    "content before the first section header",
                )),
            }
        }
        let end = Span {
            line: text.lines().count().max(1),
            col: 1,
            len: 0,
        };
        for kind in [SectionKind::PerceptionProcess, SectionKind::ExecutablePlans] {
            if doc.section(kind).is_none() {
                errors.push(Diagnostic::error(
                    "E002",
                    end,
                    format!("missing mandatory section {}", kind.header()),
                ));
            }
        }
        if errors.is_empty() {
            Ok(doc)
        } else {
            Err(errors)
        }
    }
}

/// Successful parse: the validated spec plus any warnings.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub spec: AgentSpec,
    pub warnings: Vec<Diagnostic>,
}

/// Failed parse. Holds every error found (and warnings gathered so far),
/// errors first.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ParseFailure {
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseFailure {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.is_error())
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut errors = self.errors();
        match errors.next() {
            Some(first) => {
                write!(f, "{first}")?;
                let rest = errors.count();
                if rest > 0 {
                    write!(f, " (and {rest} more)")?;
                }
                Ok(())
            }
            None => f.write_str("parse failed"),
        }
    }
}

/// Parses and validates an agent program.
pub fn parse(text: &str) -> Result<Parsed, ParseFailure> {
    let doc = SourceDocument::split(text).map_err(|diagnostics| ParseFailure { diagnostics })?;
    parser::build(&doc)
}
