//! PRISM-language rendering of agent specs.
//!
//! [`emit`] builds a [`PrismDocument`] whose `Display` is the model source.
//! The reasoning cycle is split into two synchronized phases: `[t]` updates
//! plan indices from the current beliefs and `[p]` updates beliefs (percepts,
//! action feedback, mental notes) from the plan indices. Every plan step gets
//! a guard pair `plan_j=k & !(g)` / `plan_j=k & (g)`.
//!
//! The rendering is level-triggered: plan start guards test belief values
//! rather than belief-change events, and mental notes set by logic rules take
//! effect one phase later. The embedded builder in [`crate::abstraction`]
//! implements the exact cycle semantics; the PRISM text is meant for
//! cross-checking and for use with external tools.

mod emit;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

pub use crate::abstraction::ModelKind;
pub use crate::pctl::CmpOp;
pub use emit::{emit, emit_query, EmitError, EmitOptions};
pub use parse::{parse_prism, PrismParseError};

/// Guard expression over integer variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    True,
    False,
    Cmp { var: String, op: CmpOp, value: i64 },
    /// Printed as `!(...)`.
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    /// Explicit parentheses.
    Paren(Box<Expr>),
}

impl Expr {
    pub fn cmp(var: impl Into<String>, op: CmpOp, value: i64) -> Expr {
        Expr::Cmp {
            var: var.into(),
            op,
            value,
        }
    }

    pub fn eq(var: impl Into<String>, value: i64) -> Expr {
        Expr::cmp(var, CmpOp::Eq, value)
    }

    /// Wraps compound expressions in parentheses.
    pub fn grouped(self) -> Expr {
        match self {
            Expr::And(_) | Expr::Or(_) => Expr::Paren(Box::new(self)),
            e => e,
        }
    }

    /// Conjunction with compound operands parenthesized. A single operand is
    /// returned as is; no operands give `true`.
    pub fn and(items: Vec<Expr>) -> Expr {
        Self::join(items, Expr::True, Expr::And)
    }

    pub fn or(items: Vec<Expr>) -> Expr {
        Self::join(items, Expr::False, Expr::Or)
    }

    fn join(mut items: Vec<Expr>, empty: Expr, make: fn(Vec<Expr>) -> Expr) -> Expr {
        match items.len() {
            0 => empty,
            1 => items.pop().unwrap_or(empty),
            _ => make(items.into_iter().map(Expr::grouped).collect()),
        }
    }

    pub fn negate(self) -> Expr {
        match self {
            Expr::Paren(inner) => Expr::Not(inner),
            e => Expr::Not(Box::new(e)),
        }
    }

    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Option<bool> {
        Some(match self {
            Expr::True => true,
            Expr::False => false,
            Expr::Cmp { var, op, value } => op.eval(lookup(var)?, *value),
            Expr::Not(e) => !e.eval(lookup)?,
            Expr::And(v) => {
                let mut all = true;
                for e in v {
                    all &= e.eval(lookup)?;
                }
                all
            }
            Expr::Or(v) => {
                let mut any = false;
                for e in v {
                    any |= e.eval(lookup)?;
                }
                any
            }
            Expr::Paren(e) => e.eval(lookup)?,
        })
    }

    pub fn variables(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::True | Expr::False => {}
            Expr::Cmp { var, .. } => {
                out.insert(var.clone());
            }
            Expr::Not(e) | Expr::Paren(e) => e.variables(out),
            Expr::And(v) | Expr::Or(v) => v.iter().for_each(|e| e.variables(out)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, v: &[Expr], sep: &str| {
            for (i, e) in v.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                match e {
                    Expr::And(_) | Expr::Or(_) => write!(f, "({e})")?,
                    _ => write!(f, "{e}")?,
                }
            }
            Ok(())
        };
        match self {
            Expr::True => f.write_str("true"),
            Expr::False => f.write_str("false"),
            Expr::Cmp { var, op, value } => write!(f, "{var}{}{value}", op.symbol()),
            Expr::Not(e) => write!(f, "!({e})"),
            Expr::And(v) => list(f, v, " & "),
            Expr::Or(v) => list(f, v, " | "),
            Expr::Paren(e) => write!(f, "({e})"),
        }
    }
}

/// Synchronization label of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    /// Plan index update.
    T,
    /// Belief update.
    P,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::T => "t",
            Label::P => "p",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Const(i64),
    /// `var-1`.
    Decrement(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assign {
    pub var: String,
    pub value: Value,
}

impl Assign {
    pub fn set(var: impl Into<String>, value: i64) -> Self {
        Assign {
            var: var.into(),
            value: Value::Const(value),
        }
    }
}

impl fmt::Display for Assign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            Value::Const(v) => write!(f, "({}'={v})", self.var),
            Value::Decrement(src) => write!(f, "({}'={src}-1)", self.var),
        }
    }
}

/// One probabilistic branch. No assignments prints as `true`.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub prob: Option<f64>,
    pub assigns: Vec<Assign>,
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = self.prob {
            write!(f, "{p}:")?;
        }
        if self.assigns.is_empty() {
            return f.write_str("true");
        }
        for (i, a) in self.assigns.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub label: Label,
    pub guard: Expr,
    pub updates: Vec<Update>,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {} -> ", self.label, self.guard)?;
        for (i, u) in self.updates.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{u}")?;
        }
        f.write_str(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Comment(String),
    Command(Command),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub name: String,
    pub vars: Vec<VarDecl>,
    pub items: Vec<Item>,
}

impl Module {
    pub fn commands(&self) -> impl Iterator<Item = &Command> {
        self.items.iter().filter_map(|i| match i {
            Item::Command(c) => Some(c),
            Item::Comment(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardItem {
    State { guard: Expr, value: f64 },
    Transition { label: Label, guard: Expr, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrismDocument {
    pub kind: ModelKind,
    pub modules: Vec<Module>,
    pub rewards: Vec<RewardItem>,
}

impl PrismDocument {
    pub fn module(&self, name: &str) -> Option<&Module> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn var(&self, name: &str) -> Option<&VarDecl> {
        self.modules.iter().flat_map(|m| &m.vars).find(|v| v.name == name)
    }

    pub fn var_names(&self) -> impl Iterator<Item = &str> {
        self.modules.iter().flat_map(|m| &m.vars).map(|v| v.name.as_str())
    }

    /// Checks that in every module and for every label the module uses, some
    /// command is enabled in every assignment of the variables its guards
    /// read (within their declared ranges). Returns one message per gap.
    ///
    /// The module owning `phase` is skipped: it enables one label per phase
    /// by construction. Enumeration is skipped, with a message, above `limit`
    /// assignments.
    pub fn check_exhaustive(&self, limit: u64) -> Vec<String> {
        let mut problems = Vec::new();
        for m in &self.modules {
            if m.vars.iter().any(|v| v.name == "phase") {
                continue;
            }
            for label in [Label::T, Label::P] {
                let guards: Vec<&Expr> = m.commands().filter(|c| c.label == label).map(|c| &c.guard).collect();
                if guards.is_empty() {
                    continue;
                }
                let mut vars = BTreeSet::new();
                guards.iter().for_each(|g| g.variables(&mut vars));
                let mut ranges = Vec::new();
                for v in &vars {
                    match self.var(v) {
                        Some(d) => ranges.push((v.as_str(), d.lo, d.hi)),
                        None => problems.push(format!("module {}: undeclared variable `{v}`", m.name)),
                    }
                }
                let total = ranges
                    .iter()
                    .try_fold(1u64, |acc, (_, lo, hi)| acc.checked_mul((hi - lo + 1) as u64));
                match total {
                    Some(n) if n <= limit => {}
                    _ => {
                        problems.push(format!("module {} [{label}]: too many assignments to enumerate", m.name));
                        continue;
                    }
                }
                let mut values: Vec<i64> = ranges.iter().map(|r| r.1).collect();
                'outer: loop {
                    let lookup = |name: &str| ranges.iter().position(|r| r.0 == name).map(|i| values[i]);
                    if !guards.iter().any(|g| g.eval(&lookup) == Some(true)) {
                        let at: Vec<String> = ranges
                            .iter()
                            .zip(&values)
                            .map(|(r, v)| format!("{}={v}", r.0))
                            .collect();
                        problems.push(format!("module {} [{label}]: no enabled command at {}", m.name, at.join(" & ")));
                        break;
                    }
                    for i in 0..values.len() {
                        if values[i] < ranges[i].2 {
                            values[i] += 1;
                            continue 'outer;
                        }
                        values[i] = ranges[i].1;
                    }
                    break;
                }
            }
        }
        problems
    }
}

impl fmt::Display for PrismDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.kind)?;
        for m in &self.modules {
            writeln!(f)?;
            writeln!(f, "module {}", m.name)?;
            for v in &m.vars {
                writeln!(f, "{}: [{}..{}] init {};", v.name, v.lo, v.hi, v.init)?;
            }
            for item in &m.items {
                match item {
                    Item::Comment(c) => writeln!(f, "//{c}")?,
                    Item::Command(c) => writeln!(f, "{c}")?,
                }
            }
            writeln!(f, "endmodule")?;
        }
        if !self.rewards.is_empty() {
            writeln!(f)?;
            writeln!(f, "rewards")?;
            for r in &self.rewards {
                match r {
                    RewardItem::State { guard, value } => writeln!(f, "{guard} : {value};")?,
                    RewardItem::Transition { label, guard, value } => writeln!(f, "[{label}] {guard} : {value};")?,
                }
            }
            writeln!(f, "endrewards")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_pair_rendering() {
        let ctx = Expr::and(vec![Expr::eq("a", 1), Expr::eq("b", 0)]);
        let g = Expr::and(vec![Expr::eq("plan_4", 0), Expr::eq("x", 1), ctx]);
        let neg = Expr::and(vec![Expr::eq("plan_5", 0), g.clone().negate()]);
        let pos = Expr::and(vec![Expr::eq("plan_5", 0), Expr::Paren(Box::new(g))]);
        assert_eq!(neg.to_string(), "plan_5=0 & !(plan_4=0 & x=1 & (a=1 & b=0))");
        assert_eq!(pos.to_string(), "plan_5=0 & (plan_4=0 & x=1 & (a=1 & b=0))");
    }

    #[test]
    fn updates_render() {
        let c = Command {
            label: Label::P,
            guard: Expr::True,
            updates: vec![
                Update {
                    prob: Some(0.6),
                    assigns: vec![Assign::set("c", 5)],
                },
                Update {
                    prob: Some(0.4),
                    assigns: vec![],
                },
            ],
        };
        assert_eq!(c.to_string(), "[p] true -> 0.6:(c'=5) + 0.4:true;");
    }

    #[test]
    fn exhaustiveness_finds_gaps() {
        let m = Module {
            name: "m".into(),
            vars: vec![VarDecl {
                name: "x".into(),
                lo: 0,
                hi: 2,
                init: 0,
            }],
            items: vec![
                Item::Command(Command {
                    label: Label::P,
                    guard: Expr::cmp("x", CmpOp::Le, 1),
                    updates: vec![],
                }),
            ],
        };
        let mut doc = PrismDocument {
            kind: ModelKind::Dtmc,
            modules: vec![m],
            rewards: vec![],
        };
        let gaps = doc.check_exhaustive(1000);
        assert_eq!(gaps.len(), 1);
        assert!(gaps[0].contains("x=2"), "{gaps:?}");
        doc.modules[0].items.push(Item::Command(Command {
            label: Label::P,
            guard: Expr::cmp("x", CmpOp::Gt, 1),
            updates: vec![],
        }));
        assert!(doc.check_exhaustive(1000).is_empty());
    }
}
