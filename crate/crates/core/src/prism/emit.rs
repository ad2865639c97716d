use std::collections::BTreeMap;

use super::{Assign, Command, Expr, Item, Label, Module, PrismDocument, RewardItem, Update, Value, VarDecl};
use crate::abstraction::ModelKind;
use crate::agent_model::{
    AgentSpec, BeliefId, BeliefKind, BodyStep, ContextFormula, Literal, Polarity, RewardTarget, SpecError, StepAction,
};
use crate::env_model::{percept_tick, DelayedBernoulli, PerceptLocal};
use crate::pctl::{CmpOp, Query};

const KEYWORDS: &[&str] = &[
    "bool",
    "clock",
    "const",
    "ctmc",
    "double",
    "dtmc",
    "endinit",
    "endinvariant",
    "endmodule",
    "endrewards",
    "endsystem",
    "false",
    "filter",
    "formula",
    "func",
    "global",
    "init",
    "invariant",
    "int",
    "label",
    "max",
    "mdp",
    "min",
    "module",
    "nondeterministic",
    "prob",
    "probabilistic",
    "pta",
    "rate",
    "rewards",
    "stochastic",
    "system",
    "true",
];

const PHASE: &str = "phase";

#[derive(Debug, Clone, Copy, Default)]
pub struct EmitOptions {
    /// Model type; chosen from DTMC eligibility when absent.
    pub kind: Option<ModelKind>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmitError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("identifier `{name}` is used by both {first} and {second}")]
    Collision { name: String, first: String, second: String },
    #[error("identifier `{name}` ({origin}) is a PRISM keyword")]
    Keyword { name: String, origin: String },
    #[error("query refers to unknown variable `{0}`")]
    UnknownVariable(String),
}

fn triple(d: &DelayedBernoulli) -> String {
    format!("[{},{},{}]", d.p, d.mu, d.sigma)
}

struct Namespace {
    kind: &'static str,
    names: BTreeMap<String, String>,
}

impl Namespace {
    fn new(kind: &'static str) -> Self {
        Namespace {
            kind,
            names: BTreeMap::new(),
        }
    }

    fn claim(&mut self, name: &str, origin: String) -> Result<(), EmitError> {
        if KEYWORDS.contains(&name) {
            return Err(EmitError::Keyword {
                name: name.to_string(),
                origin,
            });
        }
        if let Some(first) = self.names.get(name) {
            return Err(EmitError::Collision {
                name: name.to_string(),
                first: format!("{} for {first}", self.kind),
                second: format!("{} for {origin}", self.kind),
            });
        }
        self.names.insert(name.to_string(), origin);
        Ok(())
    }
}

struct Emitter<'a> {
    spec: &'a AgentSpec,
    kind: ModelKind,
}

impl Emitter<'_> {
    fn lit(&self, l: Literal) -> Expr {
        let name = self.spec.belief(l.atom).name.clone();
        match (self.spec.belief(l.atom).kind, l.negated) {
            (BeliefKind::Feedback, true) => Expr::cmp(name, CmpOp::Ne, 1),
            (_, true) => Expr::eq(name, 0),
            (_, false) => Expr::eq(name, 1),
        }
    }

    fn context(&self, c: &ContextFormula) -> Expr {
        match c {
            ContextFormula::True => Expr::True,
            ContextFormula::Lit(l) => self.lit(*l),
            ContextFormula::Not(x) => self.context(x).negate(),
            ContextFormula::And(v) => Expr::and(v.iter().map(|x| self.context(x)).collect()),
            ContextFormula::Or(v) => Expr::or(v.iter().map(|x| self.context(x)).collect()),
        }
    }

    /// Start condition of a plan: precedence terms (DTMC only), trigger and
    /// context.
    fn start_guard(&self, plan: usize) -> Expr {
        let p = &self.spec.plans[plan];
        let mut items = Vec::new();
        if self.kind == ModelKind::Dtmc {
            for (i, q) in self.spec.plans[..plan].iter().enumerate() {
                if q.trigger == p.trigger {
                    items.push(Expr::eq(self.spec.slot_name(i), 0));
                }
            }
        }
        items.push(self.lit(match p.trigger.polarity {
            Polarity::Added => Literal::pos(p.trigger.atom),
            Polarity::Removed => Literal::neg(p.trigger.atom),
        }));
        if p.context != ContextFormula::True {
            items.push(self.context(&p.context));
        }
        Expr::and(items)
    }

    /// Condition for leaving a step once it has been entered.
    fn advance(&self, step: &BodyStep) -> Expr {
        match step.action {
            StepAction::External(a) => {
                let fb = &self.spec.actions[a.index()].feedback.outcomes;
                if fb.is_empty() {
                    Expr::True
                } else {
                    Expr::or(fb.iter().map(|(b, _)| Expr::eq(self.spec.belief(*b).name.clone(), 1)).collect())
                }
            }
            StepAction::Note { .. } | StepAction::Interrupt(_) => Expr::True,
        }
    }

    /// `plan_j=k` terms for every step matching `pred`.
    fn occurrence_list(&self, pred: impl Fn(&StepAction) -> bool) -> Vec<Expr> {
        let mut items = Vec::new();
        for slot in 0..self.spec.slot_count() {
            for (k, step) in self.spec.slot_body(slot).iter().enumerate() {
                if pred(&step.action) {
                    items.push(Expr::eq(self.spec.slot_name(slot), k as i64 + 1));
                }
            }
        }
        items
    }

    fn occurrences(&self, pred: impl Fn(&StepAction) -> bool) -> Expr {
        Expr::or(self.occurrence_list(pred))
    }

    fn is_a0(&self, slot: usize) -> bool {
        slot >= self.spec.plans.len()
    }

    /// Guard of the `[t]` transition that enters step `k` (one-based).
    fn entering(&self, slot: usize, k: usize) -> Expr {
        let var = self.spec.slot_name(slot);
        let body = self.spec.slot_body(slot);
        if k == 1 {
            if self.is_a0(slot) {
                return Expr::eq(var, body.len() as i64 + 1);
            }
            return Expr::and(vec![Expr::eq(var, 0), Expr::Paren(Box::new(self.start_guard(slot)))]);
        }
        Expr::and(vec![
            Expr::eq(var, k as i64 - 1),
            Expr::Paren(Box::new(self.advance(&body[k - 2]))),
        ])
    }

    fn plan_module(&self, slot: usize, clashing: bool) -> Module {
        let var = self.spec.slot_name(slot);
        let body = self.spec.slot_body(slot);
        let n = body.len() as i64;
        let a0 = self.is_a0(slot);
        let mut items = Vec::new();
        let goto = |k: i64| vec![Update {
            prob: None,
            assigns: vec![Assign::set(var.clone(), k)],
        }];
        let interrupt = if a0 {
            Expr::False
        } else {
            let me = slot;
            self.occurrences(|a| matches!(a, StepAction::Interrupt(p) if p.index() == me))
        };
        let guarded = |mut terms: Vec<Expr>| {
            if interrupt != Expr::False {
                terms.insert(0, interrupt.clone().grouped().negate());
            }
            Expr::and(terms)
        };
        let cmd = |guard: Expr, updates: Vec<Update>| {
            Item::Command(Command {
                label: Label::T,
                guard,
                updates,
            })
        };
        if interrupt != Expr::False {
            items.push(Item::Comment("interrupted".into()));
            items.push(cmd(Expr::Paren(Box::new(interrupt.clone())), goto(0)));
        }
        if a0 {
            items.push(cmd(guarded(vec![Expr::eq(var.clone(), 0)]), goto(0)));
            items.push(cmd(guarded(vec![Expr::eq(var.clone(), n + 1)]), goto(1)));
        } else {
            let g = self.start_guard(slot);
            items.push(cmd(guarded(vec![Expr::eq(var.clone(), 0), g.clone().negate()]), goto(0)));
            items.push(cmd(
                guarded(vec![Expr::eq(var.clone(), 0), Expr::Paren(Box::new(g.clone()))]),
                goto(1),
            ));
            if clashing {
                items.push(Item::Comment("decline".into()));
                items.push(cmd(guarded(vec![Expr::eq(var.clone(), 0), Expr::Paren(Box::new(g))]), goto(0)));
            }
        }
        for (i, step) in body.iter().enumerate() {
            let k = i as i64 + 1;
            items.push(Item::Comment(match step.action {
                StepAction::External(a) => self.spec.actions[a.index()].name.clone(),
                StepAction::Note { atom, add } => {
                    format!("{}{}", if add { '+' } else { '-' }, self.spec.belief(atom).name)
                }
                StepAction::Interrupt(p) => format!("interrupt({p})"),
            }));
            let adv = self.advance(step);
            let next = if k == n { 0 } else { k + 1 };
            items.push(cmd(guarded(vec![Expr::eq(var.clone(), k), adv.clone().negate()]), goto(k)));
            items.push(cmd(
                guarded(vec![Expr::eq(var.clone(), k), Expr::Paren(Box::new(adv))]),
                goto(next),
            ));
        }
        Module {
            name: var.clone(),
            vars: vec![VarDecl {
                name: var.clone(),
                lo: 0,
                hi: if a0 { n + 1 } else { n },
                init: if a0 { n + 1 } else { 0 },
            }],
            items,
        }
    }

    fn init(&self, b: BeliefId) -> i64 {
        i64::from(self.spec.initial_beliefs.get(b))
    }

    fn percept_module(&self, b: BeliefId) -> Module {
        let name = self.spec.belief(b).name.clone();
        let mut vars = vec![VarDecl {
            name: name.clone(),
            lo: 0,
            hi: 1,
            init: self.init(b),
        }];
        let p_cmd = |guard: Expr, updates: Vec<Update>| {
            Item::Command(Command {
                label: Label::P,
                guard,
                updates,
            })
        };
        let Some(p) = self.spec.percept_for(b) else {
            return Module {
                name,
                vars,
                items: vec![
                    Item::Comment("static".into()),
                    p_cmd(Expr::True, vec![Update {
                        prob: None,
                        assigns: vec![],
                    }]),
                ],
            };
        };
        let timer = format!("timer_{name}");
        let max = i64::from(p.max_counter());
        vars.push(VarDecl {
            name: timer.clone(),
            lo: 0,
            hi: max,
            init: 0,
        });
        let conds: Vec<String> = p.condition.iter().map(|c| self.spec.belief(*c).name.clone()).collect();
        let mut comment = format!("{{[{}],{}", conds.join(","), triple(&p.activation));
        if p.explicit_deactivation {
            comment.push(',');
            comment.push_str(&triple(&p.deactivation));
        }
        comment.push('}');
        let mut items = vec![Item::Comment(comment)];
        if max > 1 {
            items.push(p_cmd(
                Expr::cmp(timer.clone(), CmpOp::Gt, 1),
                vec![Update {
                    prob: None,
                    assigns: vec![Assign {
                        var: timer.clone(),
                        value: Value::Decrement(timer.clone()),
                    }],
                }],
            ));
        }
        let condition = Expr::and(conds.iter().map(|c| Expr::eq(c.clone(), 1)).collect());
        for active in [false, true] {
            for counter in [0u8, 1] {
                let base = vec![Expr::eq(name.clone(), i64::from(active)), Expr::eq(timer.clone(), i64::from(counter))];
                let local = PerceptLocal { active, counter };
                let updates = |rising: bool| {
                    let out = percept_tick(p, local, rising);
                    let single = out.len() == 1;
                    out.into_iter()
                        .map(|(next, w)| {
                            let mut assigns = Vec::new();
                            if next.active != active {
                                assigns.push(Assign::set(name.clone(), i64::from(next.active)));
                            }
                            if next.counter != counter {
                                assigns.push(Assign::set(timer.clone(), i64::from(next.counter)));
                            }
                            Update {
                                prob: (!single).then_some(tidy(w)),
                                assigns,
                            }
                        })
                        .collect::<Vec<_>>()
                };
                if !p.is_ambient() && !active && counter == 0 {
                    let mut rising = base.clone();
                    rising.push(condition.clone().grouped());
                    items.push(p_cmd(Expr::and(rising), updates(true)));
                    let mut idle = base;
                    idle.push(condition.clone().grouped().negate());
                    items.push(p_cmd(Expr::and(idle), updates(false)));
                } else {
                    items.push(p_cmd(Expr::and(base), updates(false)));
                }
            }
        }
        Module { name, vars, items }
    }

    fn feedback_module(&self, action: usize) -> Option<Module> {
        let decl = &self.spec.actions[action];
        if decl.feedback.outcomes.is_empty() {
            return None;
        }
        let atoms: Vec<(String, &DelayedBernoulli)> = decl
            .feedback
            .outcomes
            .iter()
            .map(|(b, d)| (self.spec.belief(*b).name.clone(), d))
            .collect();
        let vars = decl
            .feedback
            .outcomes
            .iter()
            .map(|(b, d)| VarDecl {
                name: self.spec.belief(*b).name.clone(),
                lo: 0,
                hi: i64::from(d.max_delay()),
                init: self.init(*b),
            })
            .collect();
        let comment: Vec<String> = atoms.iter().map(|(n, d)| format!("{n}{}", triple(d))).collect();
        let inv = self.occurrences(|a| matches!(a, StepAction::External(x) if x.index() == action));
        let idle = Expr::Paren(Box::new(Expr::and(
            atoms.iter().map(|(n, _)| Expr::cmp(n.clone(), CmpOp::Le, 1)).collect(),
        )));
        let mut items = vec![Item::Comment(comment.join(" "))];
        items.push(Item::Command(Command {
            label: Label::P,
            guard: Expr::and(vec![inv.clone().negate(), idle.clone()]),
            updates: vec![Update {
                prob: None,
                assigns: atoms.iter().map(|(n, _)| Assign::set(n.clone(), 0)).collect(),
            }],
        }));
        let mut arms = Vec::new();
        for (n, d) in &atoms {
            for (delay, w) in d.delays() {
                arms.push((d.p * w, vec![Assign::set(n.clone(), i64::from(delay))]));
            }
        }
        let none = decl.feedback.none_prob();
        if none > 0.0 {
            arms.push((none, vec![]));
        }
        arms.retain(|(p, _)| *p > 0.0);
        let single = arms.len() == 1;
        items.push(Item::Command(Command {
            label: Label::P,
            guard: Expr::and(vec![Expr::Paren(Box::new(inv)), idle]),
            updates: arms
                .into_iter()
                .map(|(p, assigns)| Update {
                    prob: (!single).then_some(tidy(p)),
                    assigns,
                })
                .collect(),
        }));
        for (n, d) in &atoms {
            if d.max_delay() > 1 {
                items.push(Item::Command(Command {
                    label: Label::P,
                    guard: Expr::cmp(n.clone(), CmpOp::Gt, 1),
                    updates: vec![Update {
                        prob: None,
                        assigns: vec![Assign {
                            var: n.clone(),
                            value: Value::Decrement(n.clone()),
                        }],
                    }],
                }));
            }
        }
        Some(Module {
            name: decl.name.clone(),
            vars,
            items,
        })
    }

    fn mental_module(&self, b: BeliefId) -> Module {
        let name = self.spec.belief(b).name.clone();
        let setter = |add: bool| {
            let mut items = self.occurrence_list(|a| matches!(a, StepAction::Note { atom, add: x } if *atom == b && *x == add));
            for r in &self.spec.rules {
                if r.consequent.iter().any(|l| l.atom == b && l.negated != add) {
                    items.push(self.context(&r.antecedent));
                }
            }
            Expr::or(items)
        };
        let (on, off) = (setter(true), setter(false));
        let cmd = |guard: Expr, assigns: Vec<Assign>| {
            Item::Command(Command {
                label: Label::P,
                guard,
                updates: vec![Update { prob: None, assigns }],
            })
        };
        let mut items = Vec::new();
        match (on == Expr::False, off == Expr::False) {
            (true, true) => items.push(cmd(Expr::True, vec![])),
            (false, true) => {
                items.push(cmd(Expr::Paren(Box::new(on.clone())), vec![Assign::set(name.clone(), 1)]));
                items.push(cmd(on.negate(), vec![]));
            }
            (true, false) => {
                items.push(cmd(Expr::Paren(Box::new(off.clone())), vec![Assign::set(name.clone(), 0)]));
                items.push(cmd(off.negate(), vec![]));
            }
            (false, false) => {
                items.push(cmd(Expr::Paren(Box::new(on.clone())), vec![Assign::set(name.clone(), 1)]));
                items.push(cmd(
                    Expr::and(vec![on.clone().negate(), Expr::Paren(Box::new(off.clone()))]),
                    vec![Assign::set(name.clone(), 0)],
                ));
                items.push(cmd(Expr::and(vec![on.negate(), off.negate()]), vec![]));
            }
        }
        Module {
            name: name.clone(),
            vars: vec![VarDecl {
                name,
                lo: 0,
                hi: 1,
                init: self.init(b),
            }],
            items,
        }
    }

    fn rewards(&self) -> Vec<RewardItem> {
        let spec = self.spec;
        let mut out = Vec::new();
        let mut action_extra = vec![0.0; spec.actions.len()];
        for r in &spec.rewards {
            match r.target {
                RewardTarget::Belief(b) => out.push(RewardItem::State {
                    guard: Expr::and(vec![Expr::eq(PHASE, 0), self.lit(Literal::pos(b))]),
                    value: r.value,
                }),
                RewardTarget::Action(a) => action_extra[a.index()] += r.value,
            }
        }
        for slot in 0..spec.slot_count() {
            for (i, step) in spec.slot_body(slot).iter().enumerate() {
                let mut r = step.reward.unwrap_or(0.0);
                if let StepAction::External(a) = step.action {
                    r += spec.actions[a.index()].reward.unwrap_or(0.0) + action_extra[a.index()];
                }
                if r > 0.0 {
                    out.push(RewardItem::Transition {
                        label: Label::T,
                        guard: self.entering(slot, i + 1),
                        value: r,
                    });
                }
            }
        }
        out
    }
}

/// Drops floating-point noise such as `1 - 0.9 = 0.09999999999999998`.
fn tidy(p: f64) -> f64 {
    let r = (p * 1e12).round() / 1e12;
    if (r - p).abs() < 1e-15 {
        r
    } else {
        p
    }
}

fn check_names(spec: &AgentSpec) -> Result<(), EmitError> {
    let mut vars = Namespace::new("variable");
    let mut modules = Namespace::new("module");
    vars.claim(PHASE, "the reasoning cycle phase".into())?;
    modules.claim("reasoning_cycle", "the reasoning cycle phase".into())?;
    for slot in 0..spec.slot_count() {
        let name = spec.slot_name(slot);
        let origin = if slot < spec.plans.len() {
            format!("plan {}", slot + 1)
        } else {
            "the initial actions".to_string()
        };
        vars.claim(&name, origin.clone())?;
        modules.claim(&name, origin)?;
    }
    for (i, b) in spec.beliefs.iter().enumerate() {
        let origin = format!("{} belief \"{}\"", b.kind, b.source);
        vars.claim(&b.name, origin.clone())?;
        match b.kind {
            BeliefKind::Sensory => {
                modules.claim(&b.name, origin.clone())?;
                if spec.percept_for(BeliefId(i as u16)).is_some() {
                    vars.claim(&format!("timer_{}", b.name), origin)?;
                }
            }
            BeliefKind::Mental => modules.claim(&b.name, origin)?,
            BeliefKind::Feedback => {}
        }
    }
    for a in &spec.actions {
        if !a.feedback.outcomes.is_empty() {
            modules.claim(&a.name, format!("action \"{}\"", a.source))?;
        }
    }
    Ok(())
}

/// Renders a spec as a PRISM model.
///
/// In DTMC mode a plan's start guard also requires every earlier plan with
/// the same trigger to be idle (`plan_i=0`), which resolves trigger clashes
/// by declaration order. In MDP mode clashing plans get an extra `decline`
/// command so the choice to start is nondeterministic.
pub fn emit(spec: &AgentSpec, opts: &EmitOptions) -> Result<PrismDocument, EmitError> {
    spec.validate()?;
    check_names(spec)?;
    let eligibility = spec.dtmc_eligibility();
    let kind = opts.kind.unwrap_or(if eligibility.eligible {
        ModelKind::Dtmc
    } else {
        ModelKind::Mdp
    });
    let e = Emitter { spec, kind };
    let mut modules = vec![Module {
        name: "reasoning_cycle".into(),
        vars: vec![VarDecl {
            name: PHASE.into(),
            lo: 0,
            hi: 1,
            init: 0,
        }],
        items: vec![
            Item::Command(Command {
                label: Label::T,
                guard: Expr::eq(PHASE, 0),
                updates: vec![Update {
                    prob: None,
                    assigns: vec![Assign::set(PHASE, 1)],
                }],
            }),
            Item::Command(Command {
                label: Label::P,
                guard: Expr::eq(PHASE, 1),
                updates: vec![Update {
                    prob: None,
                    assigns: vec![Assign::set(PHASE, 0)],
                }],
            }),
        ],
    }];
    for slot in 0..spec.slot_count() {
        let clashing = kind == ModelKind::Mdp
            && eligibility
                .clashes
                .iter()
                .any(|(a, b)| a.index() == slot || b.index() == slot);
        modules.push(e.plan_module(slot, clashing));
    }
    for b in spec.beliefs_of_kind(BeliefKind::Sensory) {
        modules.push(e.percept_module(b));
    }
    for a in 0..spec.actions.len() {
        modules.extend(e.feedback_module(a));
    }
    for b in spec.beliefs_of_kind(BeliefKind::Mental) {
        modules.push(e.mental_module(b));
    }
    Ok(PrismDocument {
        kind,
        modules,
        rewards: e.rewards(),
    })
}

/// Renders a query in PRISM property syntax. With `filter`, the property is
/// evaluated from the state matching the assignments (at the start of a
/// reasoning cycle) using `filter(state, ...)`.
///
/// Step bounds are copied verbatim; in the emitted model one reasoning cycle
/// takes two transitions.
pub fn emit_query(doc: &PrismDocument, query: &Query, filter: Option<&[(String, i32)]>) -> Result<String, EmitError> {
    let known = |v: &str| doc.var_names().any(|n| n == v);
    for v in query.variables() {
        if !known(&v) {
            return Err(EmitError::UnknownVariable(v));
        }
    }
    let Some(assignments) = filter else {
        return Ok(query.to_string());
    };
    let mut terms = Vec::new();
    if known(PHASE) && !assignments.iter().any(|(v, _)| v == PHASE) {
        terms.push(format!("{PHASE}=0"));
    }
    for (v, x) in assignments {
        if !known(v) {
            return Err(EmitError::UnknownVariable(v.clone()));
        }
        terms.push(format!("{v}={x}"));
    }
    Ok(format!("filter(state, {query}, {})", terms.join(" & ")))
}
