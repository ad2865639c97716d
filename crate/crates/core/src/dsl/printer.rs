use std::fmt::Write;

use super::SectionKind;
use crate::agent_model::{
    sanitize_identifier, AgentSpec, BeliefId, BodyStep, ContextFormula, Direction, Event, Polarity, RewardTarget,
    StepAction,
};
use crate::env_model::DelayedBernoulli;

/// Source text of a belief when it can be printed back in every position a
/// belief appears, its identifier otherwise. Upper-case-only text is avoided
/// so it cannot be mistaken for a section header.
fn belief(spec: &AgentSpec, id: BeliefId) -> String {
    let b = spec.belief(id);
    let printable = sanitize_identifier(&b.source) == b.name
        && b.source.chars().any(char::is_lowercase)
        && !b.source.contains(['{', '[', ']', '^', '/']);
    if printable {
        b.source.clone()
    } else {
        b.name.clone()
    }
}

fn action_text(spec: &AgentSpec, a: usize) -> String {
    let decl = &spec.actions[a];
    if sanitize_identifier(&decl.source) == decl.name && !decl.source.contains([']', '.', '{', '/']) {
        decl.source.clone()
    } else {
        decl.name.clone()
    }
}

fn triple(d: &DelayedBernoulli) -> String {
    format!("[{},{},{}]", d.p, d.mu, d.sigma)
}

fn context(spec: &AgentSpec, c: &ContextFormula, out: &mut String) {
    let child = |x: &ContextFormula, parent_and: bool, out: &mut String| {
        let wrap = match x {
            ContextFormula::And(_) => parent_and,
            ContextFormula::Or(_) => true,
            _ => false,
        };
        if wrap {
            out.push('(');
        }
        context(spec, x, out);
        if wrap {
            out.push(')');
        }
    };
    match c {
        ContextFormula::True => out.push_str("true"),
        ContextFormula::Lit(l) => {
            if l.negated {
                out.push('~');
            }
            let _ = write!(out, "^[{}]", belief(spec, l.atom));
        }
        ContextFormula::Not(x) => {
            out.push_str("not ");
            let wrap = matches!(**x, ContextFormula::And(_) | ContextFormula::Or(_));
            if wrap {
                out.push('(');
            }
            context(spec, x, out);
            if wrap {
                out.push(')');
            }
        }
        ContextFormula::And(v) => {
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    out.push_str(" and ");
                }
                child(x, true, out);
            }
        }
        ContextFormula::Or(v) => {
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    out.push_str(" or ");
                }
                let wrap = matches!(x, ContextFormula::Or(_));
                if wrap {
                    out.push('(');
                }
                context(spec, x, out);
                if wrap {
                    out.push(')');
                }
            }
        }
    }
}

fn event(spec: &AgentSpec, e: Event) -> String {
    match e.polarity {
        Polarity::Added => format!("^[{}]", belief(spec, e.atom)),
        Polarity::Removed => format!("~^[{}]", belief(spec, e.atom)),
    }
}

fn step(spec: &AgentSpec, s: &BodyStep) -> String {
    let mut out = match s.action {
        StepAction::External(a) => format!("[{}.]", action_text(spec, a.index())),
        StepAction::Note { atom, add } => format!("{}^[{}]", if add { '+' } else { '-' }, belief(spec, atom)),
        StepAction::Interrupt(p) => format!("interrupt({})", p.number()),
    };
    if let Some(r) = s.reward {
        let _ = write!(out, " {{{r}}}");
    }
    out
}

fn steps(spec: &AgentSpec, body: &[BodyStep], out: &mut String) {
    for (i, s) in body.iter().enumerate() {
        out.push_str(&step(spec, s));
        if i + 1 == body.len() {
            out.push('.');
        }
        out.push('\n');
    }
}

/// Renders a spec in the document format. Parsing the output yields a spec
/// equal to one obtained by parsing the original document.
pub fn print(spec: &AgentSpec) -> String {
    let mut out = String::new();
    let header = |k: SectionKind, out: &mut String| {
        out.push_str(k.header());
        out.push('\n');
    };

    header(SectionKind::PerceptionProcess, &mut out);
    for id in spec.beliefs_of_kind(crate::agent_model::BeliefKind::Sensory) {
        out.push_str(&belief(spec, id));
        out.push('.');
        if let Some(p) = spec.percept_for(id) {
            let conds: Vec<String> = p.condition.iter().map(|c| format!("^[{}]", belief(spec, *c))).collect();
            let _ = write!(out, " {{[{}],{}", conds.join(","), triple(&p.activation));
            if p.explicit_deactivation {
                let _ = write!(out, ",{}", triple(&p.deactivation));
            }
            out.push('}');
        }
        out.push('\n');
    }

    if !spec.actions.is_empty() {
        header(SectionKind::Actions, &mut out);
        for (i, a) in spec.actions.iter().enumerate() {
            out.push_str(&action_text(spec, i));
            out.push('.');
            for (atom, d) in &a.feedback.outcomes {
                let _ = write!(out, " ^[{}]{}", belief(spec, *atom), triple(d));
            }
            if let Some(r) = a.reward {
                let _ = write!(out, " {{{r}}}");
            }
            out.push('\n');
        }
    }

    if !spec.initial_beliefs.is_empty() {
        header(SectionKind::InitialBeliefs, &mut out);
        for id in spec.initial_beliefs.iter() {
            let _ = writeln!(out, "^[{}]", belief(spec, id));
        }
    }

    if !spec.initial_actions.is_empty() {
        header(SectionKind::InitialActions, &mut out);
        steps(spec, &spec.initial_actions, &mut out);
    }

    if !spec.rules.is_empty() {
        header(SectionKind::LogicRules, &mut out);
        for r in &spec.rules {
            out.push_str("If ");
            context(spec, &r.antecedent, &mut out);
            out.push_str(" then ");
            let lits: Vec<String> = r
                .consequent
                .iter()
                .map(|l| format!("{}^[{}]", if l.negated { '-' } else { '+' }, belief(spec, l.atom)))
                .collect();
            out.push_str(&lits.join(", "));
            out.push_str(".\n");
        }
    }

    header(SectionKind::ExecutablePlans, &mut out);
    for p in &spec.plans {
        let _ = write!(out, "If {}", event(spec, p.trigger));
        if p.context != ContextFormula::True {
            out.push_str(" while ");
            context(spec, &p.context, &mut out);
        }
        out.push_str(" then\n");
        steps(spec, &p.body, &mut out);
    }

    if !spec.rewards.is_empty() {
        header(SectionKind::Rewards, &mut out);
        for r in &spec.rewards {
            match r.target {
                RewardTarget::Belief(b) => {
                    let _ = writeln!(out, "^[{}] {{{}}}", belief(spec, b), r.value);
                }
                RewardTarget::Action(a) => {
                    let _ = writeln!(out, "[{}.] {{{}}}", action_text(spec, a.index()), r.value);
                }
            }
        }
    }

    let rt = &spec.runtime;
    if rt.cadence.is_some() || !rt.skills.is_empty() || !rt.selectors.is_empty() {
        header(SectionKind::RuntimeVerification, &mut out);
        if let Some(c) = rt.cadence {
            let _ = writeln!(out, "cadence {c}");
        }
        for s in &rt.skills {
            let _ = writeln!(
                out,
                "skill {} {} {} -> ^[{}]",
                s.query,
                s.cmp,
                s.threshold,
                belief(spec, s.target)
            );
        }
        for s in &rt.selectors {
            out.push_str("select ");
            if let Some(e) = s.event {
                let _ = write!(out, "on {} ", event(spec, e));
            }
            out.push_str(match s.direction {
                Direction::Maximize => "maximize ",
                Direction::Minimize => "minimize ",
            });
            let _ = writeln!(out, "{}", s.objective);
        }
    }
    out
}
