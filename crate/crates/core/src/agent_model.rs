//! Static agent description and the dynamic agent state.
//!
//! An [`AgentSpec`] is the agent tuple (predicates, beliefs, initial beliefs,
//! logic rules, actions, initial actions, plan library) together with the
//! environment annotations that make the closed loop probabilistic. The
//! dynamic [`AgentState`] is the triple of current beliefs, current events and
//! plan indices.

use std::collections::BTreeSet;
use std::fmt;

use crate::env_model::{DelayedBernoulli, FeedbackOutcome, PerceptDynamics};
use crate::pctl::Query;

/// Upper bound on the number of belief atoms a spec may declare.
pub const MAX_BELIEFS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BeliefId(pub u16);

/// Zero-based position in the plan library. Displayed one-based (`plan_1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlanId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(pub u16);

impl BeliefId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl PlanId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// One-based number used in emitted variable names and user-facing text.
    pub fn number(self) -> usize {
        self.0 as usize + 1
    }
}

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PlanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "plan_{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BeliefKind {
    /// Set by the environment's percept process (Bs).
    Sensory,
    /// Set by the environment as the outcome of an external action (Ba).
    Feedback,
    /// Set by internal actions and logic rules (Bm).
    Mental,
}

impl fmt::Display for BeliefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BeliefKind::Sensory => "sensory",
            BeliefKind::Feedback => "feedback",
            BeliefKind::Mental => "mental",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeliefAtom {
    /// Sanitized identifier, unique across the belief set.
    pub name: String,
    pub kind: BeliefKind,
    /// Text as first written in the source document.
    pub source: String,
}

/// Sanitizes free text into a lowercase identifier: ASCII alphanumeric words
/// joined by single underscores. `"Sea state is too high."` becomes
/// `sea_state_is_too_high`.
pub fn sanitize_identifier(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_sep = false;
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            pending_sep = true;
        }
    }
    if out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert_str(0, "b_");
    }
    out
}

/// Truth assignment over the belief set, one bit per [`BeliefId`].
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Valuation(u128);

impl Valuation {
    pub const EMPTY: Valuation = Valuation(0);

    pub fn from_bits(bits: u128) -> Self {
        Valuation(bits)
    }

    pub fn bits(self) -> u128 {
        self.0
    }

    pub fn get(self, atom: BeliefId) -> bool {
        self.0 >> atom.0 & 1 == 1
    }

    pub fn set(&mut self, atom: BeliefId, value: bool) {
        if value {
            self.0 |= 1u128 << atom.0;
        } else {
            self.0 &= !(1u128 << atom.0);
        }
    }

    pub fn with(mut self, atom: BeliefId, value: bool) -> Self {
        self.set(atom, value);
        self
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn xor(self, other: Valuation) -> Valuation {
        Valuation(self.0 ^ other.0)
    }

    pub fn and(self, other: Valuation) -> Valuation {
        Valuation(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = BeliefId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let tz = bits.trailing_zeros();
            bits &= bits - 1;
            Some(BeliefId(tz as u16))
        })
    }
}

impl fmt::Debug for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|b| b.0)).finish()
    }
}

impl FromIterator<BeliefId> for Valuation {
    fn from_iter<I: IntoIterator<Item = BeliefId>>(iter: I) -> Self {
        let mut v = Valuation::EMPTY;
        for b in iter {
            v.set(b, true);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub atom: BeliefId,
    pub negated: bool,
}

impl Literal {
    pub fn pos(atom: BeliefId) -> Self {
        Literal { atom, negated: false }
    }

    pub fn neg(atom: BeliefId) -> Self {
        Literal { atom, negated: true }
    }

    pub fn holds(self, beliefs: Valuation) -> bool {
        beliefs.get(self.atom) != self.negated
    }
}

/// Propositional condition over the belief set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextFormula {
    True,
    Lit(Literal),
    Not(Box<ContextFormula>),
    And(Vec<ContextFormula>),
    Or(Vec<ContextFormula>),
}

/// Conjunctive clause: atoms required true and atoms required false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Clause {
    pub pos: Valuation,
    pub neg: Valuation,
}

impl Clause {
    fn conjoin(self, other: Clause) -> Option<Clause> {
        let pos = Valuation(self.pos.0 | other.pos.0);
        let neg = Valuation(self.neg.0 | other.neg.0);
        if pos.0 & neg.0 != 0 {
            None
        } else {
            Some(Clause { pos, neg })
        }
    }

    fn excludes(self, other: Clause) -> bool {
        self.pos.0 & other.neg.0 != 0 || self.neg.0 & other.pos.0 != 0
    }
}

const DNF_LIMIT: usize = 256;

impl ContextFormula {
    pub fn lit(atom: BeliefId, negated: bool) -> Self {
        ContextFormula::Lit(Literal { atom, negated })
    }

    pub fn eval(&self, beliefs: Valuation) -> bool {
        match self {
            ContextFormula::True => true,
            ContextFormula::Lit(l) => l.holds(beliefs),
            ContextFormula::Not(inner) => !inner.eval(beliefs),
            ContextFormula::And(parts) => parts.iter().all(|p| p.eval(beliefs)),
            ContextFormula::Or(parts) => parts.iter().any(|p| p.eval(beliefs)),
        }
    }

    pub fn atoms(&self, out: &mut BTreeSet<BeliefId>) {
        match self {
            ContextFormula::True => {}
            ContextFormula::Lit(l) => {
                out.insert(l.atom);
            }
            ContextFormula::Not(inner) => inner.atoms(out),
            ContextFormula::And(parts) | ContextFormula::Or(parts) => {
                parts.iter().for_each(|p| p.atoms(out))
            }
        }
    }

    /// Canonical form: negations pushed onto literals, nested conjunctions and
    /// disjunctions flattened, operands sorted and deduplicated, `true`
    /// absorbed.
    pub fn normalize(&self) -> ContextFormula {
        self.nnf(false).canonical()
    }

    fn nnf(&self, negate: bool) -> ContextFormula {
        match self {
            ContextFormula::True => {
                if negate {
                    ContextFormula::Or(Vec::new())
                } else {
                    ContextFormula::True
                }
            }
            ContextFormula::Lit(l) => ContextFormula::Lit(Literal {
                atom: l.atom,
                negated: l.negated != negate,
            }),
            ContextFormula::Not(inner) => inner.nnf(!negate),
            ContextFormula::And(parts) => {
                let parts = parts.iter().map(|p| p.nnf(negate)).collect();
                if negate {
                    ContextFormula::Or(parts)
                } else {
                    ContextFormula::And(parts)
                }
            }
            ContextFormula::Or(parts) => {
                let parts = parts.iter().map(|p| p.nnf(negate)).collect();
                if negate {
                    ContextFormula::And(parts)
                } else {
                    ContextFormula::Or(parts)
                }
            }
        }
    }

    fn canonical(self) -> ContextFormula {
        match self {
            ContextFormula::And(parts) => {
                let mut flat = Vec::new();
                for p in parts.into_iter().map(ContextFormula::canonical) {
                    match p {
                        ContextFormula::True => {}
                        ContextFormula::And(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                flat.sort();
                flat.dedup();
                match flat.len() {
                    0 => ContextFormula::True,
                    1 => flat.pop().unwrap(),
                    _ => ContextFormula::And(flat),
                }
            }
            ContextFormula::Or(parts) => {
                let mut flat = Vec::new();
                for p in parts.into_iter().map(ContextFormula::canonical) {
                    match p {
                        ContextFormula::True => return ContextFormula::True,
                        ContextFormula::Or(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                flat.sort();
                flat.dedup();
                if flat.len() == 1 {
                    flat.pop().unwrap()
                } else {
                    ContextFormula::Or(flat)
                }
            }
            other => other,
        }
    }

    /// Disjunctive normal form with contradictory clauses removed. Returns
    /// `None` when the expansion exceeds an internal clause budget.
    pub fn dnf(&self) -> Option<Vec<Clause>> {
        fn go(f: &ContextFormula, negate: bool) -> Option<Vec<Clause>> {
            match (f, negate) {
                (ContextFormula::True, false) => Some(vec![Clause {
                    pos: Valuation::EMPTY,
                    neg: Valuation::EMPTY,
                }]),
                (ContextFormula::True, true) => Some(Vec::new()),
                (ContextFormula::Lit(l), _) => {
                    let mut c = Clause {
                        pos: Valuation::EMPTY,
                        neg: Valuation::EMPTY,
                    };
                    if l.negated != negate {
                        c.neg.set(l.atom, true);
                    } else {
                        c.pos.set(l.atom, true);
                    }
                    Some(vec![c])
                }
                (ContextFormula::Not(inner), _) => go(inner, !negate),
                (ContextFormula::And(parts), false) | (ContextFormula::Or(parts), true) => {
                    let mut acc = vec![Clause {
                        pos: Valuation::EMPTY,
                        neg: Valuation::EMPTY,
                    }];
                    for p in parts {
                        let rhs = go(p, negate)?;
                        let mut next = Vec::new();
                        for a in &acc {
                            for b in &rhs {
                                if let Some(c) = a.conjoin(*b) {
                                    next.push(c);
                                }
                            }
                        }
                        next.sort();
                        next.dedup();
                        if next.len() > DNF_LIMIT {
                            return None;
                        }
                        acc = next;
                    }
                    Some(acc)
                }
                (ContextFormula::Or(parts), false) | (ContextFormula::And(parts), true) => {
                    let mut acc = Vec::new();
                    for p in parts {
                        acc.extend(go(p, negate)?);
                        if acc.len() > DNF_LIMIT {
                            return None;
                        }
                    }
                    acc.sort();
                    acc.dedup();
                    Some(acc)
                }
            }
        }
        go(self, false)
    }
}

/// Evaluates a context against a belief valuation.
pub fn satisfies(beliefs: Valuation, context: &ContextFormula) -> bool {
    context.eval(beliefs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Added,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub atom: BeliefId,
    pub polarity: Polarity,
}

impl Event {
    pub fn added(atom: BeliefId) -> Self {
        Event {
            atom,
            polarity: Polarity::Added,
        }
    }

    pub fn removed(atom: BeliefId) -> Self {
        Event {
            atom,
            polarity: Polarity::Removed,
        }
    }

    /// The literal that holds right after this event.
    pub fn literal(self) -> Literal {
        Literal {
            atom: self.atom,
            negated: self.polarity == Polarity::Removed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepAction {
    /// Invoke a declared external action.
    External(ActionId),
    /// Add (`true`) or remove (`false`) a mental note.
    Note { atom: BeliefId, add: bool },
    /// Reset another plan's index to 0. Extension: the source architecture
    /// mentions plan interruption without giving it semantics.
    Interrupt(PlanId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyStep {
    pub action: StepAction,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub id: PlanId,
    pub trigger: Event,
    pub context: ContextFormula,
    pub body: Vec<BodyStep>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    /// Trigger literal conjoined with the context, in DNF.
    fn applicability_dnf(&self) -> Option<Vec<Clause>> {
        ContextFormula::And(vec![
            ContextFormula::Lit(self.trigger.literal()),
            self.context.clone(),
        ])
        .dnf()
    }
}

/// Declared external action with its feedback model.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDecl {
    pub name: String,
    pub source: String,
    pub feedback: FeedbackOutcome,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicRule {
    pub antecedent: ContextFormula,
    /// Signed mental notes: a negated literal removes the note.
    pub consequent: Vec<Literal>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardTarget {
    /// State reward collected in every state where the belief holds.
    Belief(BeliefId),
    /// Transition reward collected whenever the action is invoked.
    Action(ActionId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardDecl {
    pub target: RewardTarget,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillDecl {
    pub query: Query,
    pub cmp: crate::pctl::Comparison,
    pub threshold: f64,
    pub target: BeliefId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorDecl {
    /// Event the objective applies to; `None` matches every event.
    pub event: Option<Event>,
    pub objective: Query,
    pub direction: Direction,
}

/// Run-time verification block of a document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuntimeSection {
    pub cadence: Option<u32>,
    pub skills: Vec<SkillDecl>,
    pub selectors: Vec<SelectorDecl>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentSpec {
    pub beliefs: Vec<BeliefAtom>,
    pub initial_beliefs: Valuation,
    pub rules: Vec<LogicRule>,
    pub actions: Vec<ActionDecl>,
    pub initial_actions: Vec<BodyStep>,
    pub plans: Vec<Plan>,
    /// Percept processes, at most one per sensory atom. Sensory atoms without
    /// an entry keep their initial value.
    pub percepts: Vec<PerceptDynamics>,
    pub rewards: Vec<RewardDecl>,
    pub runtime: RuntimeSection,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("unknown belief `{0}`")]
    UnknownBelief(String),
    #[error("unknown belief id {0}")]
    UnknownBeliefId(u16),
    #[error("duplicate belief `{0}`")]
    DuplicateBelief(String),
    #[error("too many beliefs: {0} (limit {MAX_BELIEFS})")]
    TooManyBeliefs(usize),
    #[error("no plans declared")]
    NoPlans,
    #[error("{plan} has an empty body")]
    EmptyBody { plan: String },
    #[error("{context}: `{atom}` is not a mental note")]
    NotMental { context: String, atom: String },
    #[error("rule {rule} both adds and removes `{atom}`")]
    NonMonotoneRule { rule: usize, atom: String },
    #[error("unknown action id {0}")]
    UnknownAction(u16),
    #[error("unknown plan {0}")]
    UnknownPlan(usize),
    #[error("invalid annotation for `{atom}`: {reason}")]
    BadAnnotation { atom: String, reason: String },
    #[error("feedback probabilities of `{action}` sum to {sum} > 1")]
    FeedbackSum { action: String, sum: f64 },
    #[error("negative reward {value} on `{target}`")]
    NegativeReward { target: String, value: f64 },
    #[error("initial beliefs are not closed under rule {rule}")]
    InitialBeliefsViolateRule { rule: usize },
    #[error("logic rules do not reach a fixpoint within {passes} passes (rules {rules:?})")]
    RuleCycle { passes: usize, rules: Vec<usize> },
    #[error("body of {plan} is longer than 254 steps")]
    BodyTooLong { plan: String },
}

/// Result of the syntactic DTMC-eligibility check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Eligibility {
    pub eligible: bool,
    /// Every pair of plans that may both be applicable to the same event.
    pub clashes: Vec<(PlanId, PlanId)>,
}

impl AgentSpec {
    pub fn belief(&self, id: BeliefId) -> &BeliefAtom {
        &self.beliefs[id.index()]
    }

    pub fn belief_id(&self, name: &str) -> Option<BeliefId> {
        self.beliefs
            .iter()
            .position(|b| b.name == name)
            .map(|i| BeliefId(i as u16))
    }

    pub fn action_id(&self, name: &str) -> Option<ActionId> {
        self.actions
            .iter()
            .position(|a| a.name == name)
            .map(|i| ActionId(i as u16))
    }

    pub fn beliefs_of_kind(&self, kind: BeliefKind) -> impl Iterator<Item = BeliefId> + '_ {
        self.beliefs
            .iter()
            .enumerate()
            .filter(move |(_, b)| b.kind == kind)
            .map(|(i, _)| BeliefId(i as u16))
    }

    pub fn mental_count(&self) -> usize {
        self.beliefs_of_kind(BeliefKind::Mental).count()
    }

    pub fn feedback_count(&self) -> usize {
        self.actions.iter().map(|a| a.feedback.outcomes.len()).sum()
    }

    /// Mask of feedback atoms.
    pub fn feedback_mask(&self) -> Valuation {
        self.beliefs_of_kind(BeliefKind::Feedback).collect()
    }

    pub fn percept_for(&self, atom: BeliefId) -> Option<&PerceptDynamics> {
        self.percepts.iter().find(|p| p.atom == atom)
    }

    /// Checks the structural invariants every downstream module relies on.
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.beliefs.len() > MAX_BELIEFS {
            return Err(SpecError::TooManyBeliefs(self.beliefs.len()));
        }
        let mut seen = BTreeSet::new();
        for b in &self.beliefs {
            if !seen.insert(b.name.as_str()) {
                return Err(SpecError::DuplicateBelief(b.name.clone()));
            }
        }
        let n = self.beliefs.len() as u16;
        let check_id = |id: BeliefId| {
            if id.0 < n {
                Ok(())
            } else {
                Err(SpecError::UnknownBeliefId(id.0))
            }
        };
        let check_ctx = |c: &ContextFormula| {
            let mut atoms = BTreeSet::new();
            c.atoms(&mut atoms);
            atoms.into_iter().try_for_each(check_id)
        };
        if let Some(stray) = self.initial_beliefs.iter().find(|b| b.0 >= n) {
            return Err(SpecError::UnknownBeliefId(stray.0));
        }
        for (i, plan) in self.plans.iter().enumerate() {
            let label = PlanId(i as u16).to_string();
            if plan.body.is_empty() {
                return Err(SpecError::EmptyBody { plan: label });
            }
            if plan.body.len() > 254 {
                return Err(SpecError::BodyTooLong { plan: label });
            }
            check_id(plan.trigger.atom)?;
            check_ctx(&plan.context)?;
            self.validate_body(&plan.body, &label)?;
        }
        self.validate_body(&self.initial_actions, "initial actions")?;
        if self.initial_actions.len() > 253 {
            return Err(SpecError::BodyTooLong {
                plan: "initial actions".into(),
            });
        }
        for (i, rule) in self.rules.iter().enumerate() {
            check_ctx(&rule.antecedent)?;
            for lit in &rule.consequent {
                check_id(lit.atom)?;
                if self.belief(lit.atom).kind != BeliefKind::Mental {
                    return Err(SpecError::NotMental {
                        context: format!("rule {}", i + 1),
                        atom: self.belief(lit.atom).name.clone(),
                    });
                }
                if rule
                    .consequent
                    .iter()
                    .any(|o| o.atom == lit.atom && o.negated != lit.negated)
                {
                    return Err(SpecError::NonMonotoneRule {
                        rule: i + 1,
                        atom: self.belief(lit.atom).name.clone(),
                    });
                }
            }
        }
        for action in &self.actions {
            for (atom, db) in &action.feedback.outcomes {
                check_id(*atom)?;
                db.validate().map_err(|reason| SpecError::BadAnnotation {
                    atom: self.belief(*atom).name.clone(),
                    reason,
                })?;
            }
            let sum: f64 = action.feedback.outcomes.iter().map(|(_, d)| d.p).sum();
            if sum > 1.0 + 1e-12 {
                return Err(SpecError::FeedbackSum {
                    action: action.name.clone(),
                    sum,
                });
            }
            if let Some(r) = action.reward {
                if r < 0.0 {
                    return Err(SpecError::NegativeReward {
                        target: action.name.clone(),
                        value: r,
                    });
                }
            }
        }
        for p in &self.percepts {
            check_id(p.atom)?;
            p.condition.iter().copied().try_for_each(check_id)?;
            for db in [&p.activation, &p.deactivation] {
                db.validate().map_err(|reason| SpecError::BadAnnotation {
                    atom: self.belief(p.atom).name.clone(),
                    reason,
                })?;
            }
        }
        for r in &self.rewards {
            let (name, ok) = match r.target {
                RewardTarget::Belief(b) => (
                    self.beliefs.get(b.index()).map(|b| b.name.clone()),
                    b.0 < n,
                ),
                RewardTarget::Action(a) => (
                    self.actions.get(a.index()).map(|a| a.name.clone()),
                    a.index() < self.actions.len(),
                ),
            };
            if !ok {
                return Err(SpecError::UnknownBelief(format!("{:?}", r.target)));
            }
            if r.value < 0.0 {
                return Err(SpecError::NegativeReward {
                    target: name.unwrap_or_default(),
                    value: r.value,
                });
            }
        }
        Ok(())
    }

    fn validate_body(&self, body: &[BodyStep], label: &str) -> Result<(), SpecError> {
        for step in body {
            match step.action {
                StepAction::External(a) => {
                    if a.index() >= self.actions.len() {
                        return Err(SpecError::UnknownAction(a.0));
                    }
                }
                StepAction::Note { atom, .. } => {
                    if atom.index() >= self.beliefs.len() {
                        return Err(SpecError::UnknownBeliefId(atom.0));
                    }
                    if self.belief(atom).kind != BeliefKind::Mental {
                        return Err(SpecError::NotMental {
                            context: label.to_string(),
                            atom: self.belief(atom).name.clone(),
                        });
                    }
                }
                StepAction::Interrupt(p) => {
                    if p.index() >= self.plans.len() {
                        return Err(SpecError::UnknownPlan(p.number()));
                    }
                }
            }
            if let Some(r) = step.reward {
                if r < 0.0 {
                    return Err(SpecError::NegativeReward {
                        target: label.to_string(),
                        value: r,
                    });
                }
            }
        }
        Ok(())
    }

    /// Decides whether every event can make at most one plan applicable.
    ///
    /// Two plans clash when they share a triggering event and their
    /// (normalized) contexts are not syntactically exclusive, i.e. some pair
    /// of DNF clauses lacks a complementary literal. Identical contexts always
    /// clash. The check is conservative: a reported clash may be semantically
    /// impossible, in which case the MDP built instead is still sound.
    pub fn dtmc_eligibility(&self) -> Eligibility {
        let dnfs: Vec<Option<Vec<Clause>>> =
            self.plans.iter().map(Plan::applicability_dnf).collect();
        let mut clashes = Vec::new();
        for i in 0..self.plans.len() {
            for j in i + 1..self.plans.len() {
                let (a, b) = (&self.plans[i], &self.plans[j]);
                if a.trigger != b.trigger {
                    continue;
                }
                let exclusive = match (&dnfs[i], &dnfs[j]) {
                    (Some(ca), Some(cb)) => ca
                        .iter()
                        .all(|x| cb.iter().all(|y| x.excludes(*y))),
                    _ => false,
                };
                if !exclusive {
                    clashes.push((PlanId(i as u16), PlanId(j as u16)));
                }
            }
        }
        Eligibility {
            eligible: clashes.is_empty(),
            clashes,
        }
    }

    /// Number of execution slots: one per plan plus one for the initial
    /// actions when there are any.
    pub fn slot_count(&self) -> usize {
        self.plans.len() + usize::from(!self.initial_actions.is_empty())
    }

    /// Body executed by a slot (see [`AgentSpec::slot_count`]).
    pub fn slot_body(&self, slot: usize) -> &[BodyStep] {
        if slot < self.plans.len() {
            &self.plans[slot].body
        } else {
            &self.initial_actions
        }
    }

    pub fn slot_name(&self, slot: usize) -> String {
        if slot < self.plans.len() {
            PlanId(slot as u16).to_string()
        } else {
            "plan_0".to_string()
        }
    }
}

/// Dynamic agent state `{B[t], E[t], λ[t]}`.
///
/// `events` holds one bit per atom that changed in the last belief review;
/// the polarity follows from the current value of the atom. `lambdas` holds
/// one index per execution slot. The trailing slot, present when the spec has
/// initial actions, uses `len + 1` to mean "not yet started".
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AgentState {
    pub beliefs: Valuation,
    pub events: Valuation,
    pub lambdas: Vec<u8>,
}

impl AgentState {
    /// `s0 = {B0, ∅, 0}` with initial actions pending.
    pub fn initial(spec: &AgentSpec) -> Self {
        let mut lambdas = vec![0u8; spec.slot_count()];
        if !spec.initial_actions.is_empty() {
            lambdas[spec.plans.len()] = spec.initial_actions.len() as u8 + 1;
        }
        AgentState {
            beliefs: spec.initial_beliefs,
            events: Valuation::EMPTY,
            lambdas,
        }
    }

    pub fn event_list(&self) -> Vec<Event> {
        self.events
            .iter()
            .map(|atom| {
                if self.beliefs.get(atom) {
                    Event::added(atom)
                } else {
                    Event::removed(atom)
                }
            })
            .collect()
    }

    /// Plans currently in the intention set (`λ > 0`).
    pub fn intentions(&self, plan_count: usize) -> impl Iterator<Item = PlanId> + '_ {
        self.lambdas[..plan_count]
            .iter()
            .enumerate()
            .filter(|(_, l)| **l > 0)
            .map(|(i, _)| PlanId(i as u16))
    }
}

/// Convenience for building test and fixture specs by hand.
pub fn delayed(p: f64, mu: u32, sigma: u32) -> DelayedBernoulli {
    DelayedBernoulli { p, mu, sigma }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(i: u16) -> BeliefId {
        BeliefId(i)
    }

    #[test]
    fn sanitize_matches_emitted_style() {
        assert_eq!(sanitize_identifier("Sea state is too high."), "sea_state_is_too_high");
        assert_eq!(sanitize_identifier("Re_exploring areas"), "re_exploring_areas");
        assert_eq!(sanitize_identifier("  I am at global waypoint "), "i_am_at_global_waypoint");
        assert_eq!(sanitize_identifier("3 mines"), "b_3_mines");
    }

    #[test]
    fn context_evaluation() {
        // a and ~b
        let c = ContextFormula::And(vec![ContextFormula::lit(b(0), false), ContextFormula::lit(b(1), true)]);
        let v = Valuation::EMPTY.with(b(0), true);
        assert!(satisfies(v, &c));
        assert!(!satisfies(v.with(b(1), true), &c));
        assert!(satisfies(v, &ContextFormula::True));
    }

    #[test]
    fn normalize_strips_double_negation_and_sorts() {
        let a = ContextFormula::lit(b(0), false);
        let c = ContextFormula::lit(b(2), true);
        let f1 = ContextFormula::And(vec![c.clone(), ContextFormula::Not(Box::new(ContextFormula::Not(Box::new(a.clone()))))]);
        let f2 = ContextFormula::And(vec![a, ContextFormula::True, c]);
        assert_eq!(f1.normalize(), f2.normalize());
    }

    #[test]
    fn dnf_drops_contradictions() {
        let f = ContextFormula::And(vec![ContextFormula::lit(b(0), false), ContextFormula::lit(b(0), true)]);
        assert_eq!(f.dnf().unwrap(), vec![]);
        let g = ContextFormula::Not(Box::new(ContextFormula::Or(vec![
            ContextFormula::lit(b(0), false),
            ContextFormula::lit(b(1), false),
        ])));
        let clauses = g.dnf().unwrap();
        assert_eq!(clauses.len(), 1);
        assert_eq!(clauses[0].neg, Valuation::EMPTY.with(b(0), true).with(b(1), true));
    }

    #[test]
    fn valuation_iteration_order() {
        let v: Valuation = [b(5), b(1), b(100)].into_iter().collect();
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![b(1), b(5), b(100)]);
        assert_eq!(v.count(), 3);
    }
}
