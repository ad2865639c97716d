//! PCTL queries over [`ProbModel`](crate::abstraction::ProbModel)s.
//!
//! The concrete syntax follows the PRISM property language closely enough
//! that printed queries can be handed to PRISM unchanged.

mod check;
mod parser;

use std::fmt;

pub use check::{
    check, check_bounded, check_from, check_reward, check_state_formula, check_unbounded,
    type_check, CheckError, CheckOptions, CheckResult, Iterated, Optimum,
};
pub use parser::{parse_query, parse_state_formula, QueryError};

/// Relational operator of a probability or reward bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparison {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
        }
    }

    /// Whether satisfying the bound calls for the minimal probability
    /// over schedulers (lower bounds must hold for every scheduler).
    pub fn needs_min(self) -> bool {
        matches!(self, Comparison::Gt | Comparison::Ge)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Relational operator of an atomic proposition `var op value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AtomicProp {
    pub var: String,
    pub op: CmpOp,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateFormula {
    True,
    False,
    Atom(AtomicProp),
    Label(String),
    Not(Box<StateFormula>),
    And(Box<StateFormula>, Box<StateFormula>),
    Or(Box<StateFormula>, Box<StateFormula>),
    Prob {
        cmp: Comparison,
        bound: f64,
        path: Box<PathFormula>,
    },
    Reward {
        cmp: Comparison,
        bound: f64,
        path: Box<RewardPath>,
    },
}

impl StateFormula {
    pub fn atom(var: &str, op: CmpOp, value: i64) -> Self {
        StateFormula::Atom(AtomicProp {
            var: var.to_string(),
            op,
            value,
        })
    }

    pub fn and(a: StateFormula, b: StateFormula) -> Self {
        StateFormula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: StateFormula, b: StateFormula) -> Self {
        StateFormula::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: StateFormula) -> Self {
        StateFormula::Not(Box::new(a))
    }

    /// Variables referenced by atomic propositions, including nested ones.
    pub fn variables(&self, out: &mut Vec<String>) {
        match self {
            StateFormula::True | StateFormula::False | StateFormula::Label(_) => {}
            StateFormula::Atom(a) => {
                if !out.contains(&a.var) {
                    out.push(a.var.clone())
                }
            }
            StateFormula::Not(a) => a.variables(out),
            StateFormula::And(a, b) | StateFormula::Or(a, b) => {
                a.variables(out);
                b.variables(out);
            }
            StateFormula::Prob { path, .. } => path.variables(out),
            StateFormula::Reward { path, .. } => {
                if let RewardPath::Reach(f) = path.as_ref() {
                    f.variables(out)
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            StateFormula::Or(..) => 1,
            StateFormula::And(..) => 2,
            StateFormula::Not(_) => 3,
            _ => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = self.precedence();
        if p < min {
            f.write_str("(")?;
        }
        match self {
            StateFormula::True => f.write_str("true")?,
            StateFormula::False => f.write_str("false")?,
            StateFormula::Atom(a) => write!(f, "{}{}{}", a.var, a.op.symbol(), a.value)?,
            StateFormula::Label(l) => write!(f, "\"{l}\"")?,
            StateFormula::Not(a) => {
                f.write_str("!")?;
                a.fmt_prec(f, 3)?;
            }
            StateFormula::And(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str(" & ")?;
                b.fmt_prec(f, 3)?;
            }
            StateFormula::Or(a, b) => {
                a.fmt_prec(f, 1)?;
                f.write_str(" | ")?;
                b.fmt_prec(f, 2)?;
            }
            StateFormula::Prob { cmp, bound, path } => write!(f, "P{cmp}{bound} [ {path} ]")?,
            StateFormula::Reward { cmp, bound, path } => write!(f, "R{cmp}{bound} [ {path} ]")?,
        }
        if p < min {
            f.write_str(")")?;
        }
        Ok(())
    }

    /// Writes the formula as an operand of a temporal operator, where only
    /// atomic shapes go unparenthesized.
    fn fmt_operand(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 3)
    }
}

impl fmt::Display for StateFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathFormula {
    Next(StateFormula),
    /// `lhs U rhs`, optionally step-bounded. `F φ` is `true U φ`.
    Until {
        lhs: StateFormula,
        rhs: StateFormula,
        bound: Option<u32>,
    },
}

impl PathFormula {
    pub fn eventually(target: StateFormula, bound: Option<u32>) -> Self {
        PathFormula::Until {
            lhs: StateFormula::True,
            rhs: target,
            bound,
        }
    }

    fn variables(&self, out: &mut Vec<String>) {
        match self {
            PathFormula::Next(a) => a.variables(out),
            PathFormula::Until { lhs, rhs, .. } => {
                lhs.variables(out);
                rhs.variables(out);
            }
        }
    }
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFormula::Next(a) => {
                f.write_str("X ")?;
                a.fmt_operand(f)
            }
            PathFormula::Until { lhs, rhs, bound } => {
                if *lhs == StateFormula::True {
                    f.write_str("F")?;
                } else {
                    lhs.fmt_operand(f)?;
                    f.write_str(" U")?;
                }
                if let Some(k) = bound {
                    write!(f, "<={k}")?;
                }
                f.write_str(" ")?;
                rhs.fmt_operand(f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardPath {
    /// Reward accumulated over the first `k` steps.
    Cumulative(u32),
    /// Reward accumulated until a target is reached.
    Reach(StateFormula),
}

impl fmt::Display for RewardPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardPath::Cumulative(k) => write!(f, "C<={k}"),
            RewardPath::Reach(a) => {
                f.write_str("F ")?;
                a.fmt_operand(f)
            }
        }
    }
}

/// Which value of a quantitative query is asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    /// `P=?` / `R=?`: Markov chains only.
    Value,
    Min,
    Max,
}

impl Quantity {
    fn suffix(self) -> &'static str {
        match self {
            Quantity::Value => "",
            Quantity::Min => "min",
            Quantity::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Prob { quantity: Quantity, path: PathFormula },
    Reward { quantity: Quantity, path: RewardPath },
    /// Qualitative query: a state formula, possibly with bounded operators.
    State(StateFormula),
}

impl Query {
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Query::Prob { path, .. } => path.variables(&mut out),
            Query::Reward { path, .. } => {
                if let RewardPath::Reach(f) = path {
                    f.variables(&mut out)
                }
            }
            Query::State(f) => f.variables(&mut out),
        }
        out
    }

    pub fn quantity(&self) -> Option<Quantity> {
        match self {
            Query::Prob { quantity, .. } | Query::Reward { quantity, .. } => Some(*quantity),
            Query::State(_) => None,
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Prob { quantity, path } => write!(f, "P{}=? [ {path} ]", quantity.suffix()),
            Query::Reward { quantity, path } => write!(f, "R{}=? [ {path} ]", quantity.suffix()),
            Query::State(s) => write!(f, "{s}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printing_parenthesizes_compound_operands() {
        let q = Query::Prob {
            quantity: Quantity::Max,
            path: PathFormula::eventually(
                StateFormula::and(
                    StateFormula::atom("plan_2", CmpOp::Eq, 1),
                    StateFormula::atom("plan_4", CmpOp::Eq, 2),
                ),
                None,
            ),
        };
        assert_eq!(q.to_string(), "Pmax=? [ F (plan_2=1 & plan_4=2) ]");
        let q = Query::Prob {
            quantity: Quantity::Value,
            path: PathFormula::eventually(StateFormula::atom("mission_complete", CmpOp::Eq, 1), Some(100)),
        };
        assert_eq!(q.to_string(), "P=? [ F<=100 mission_complete=1 ]");
    }

    #[test]
    fn printing_respects_precedence() {
        let f = StateFormula::and(
            StateFormula::or(StateFormula::Label("a".into()), StateFormula::True),
            StateFormula::not(StateFormula::and(StateFormula::True, StateFormula::False)),
        );
        assert_eq!(f.to_string(), "(\"a\" | true) & !(true & false)");
    }
}
