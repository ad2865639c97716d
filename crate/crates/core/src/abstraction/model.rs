use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

/// Sum-to-one tolerance for rows and choice distributions.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dtmc,
    Mdp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Dtmc => "dtmc",
            ModelKind::Mdp => "mdp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("state {state} has no choices")]
    NoChoices { state: usize },
    #[error("DTMC state {state} has {choices} choices")]
    DtmcBranching { state: usize, choices: usize },
    #[error("distribution of state {state} choice {choice} sums to {sum}")]
    NotStochastic { state: usize, choice: usize, sum: f64 },
    #[error("transition from state {state} targets unknown state {dst}")]
    DanglingTransition { state: usize, dst: usize },
    #[error("unknown state: {0}")]
    UnknownState(String),
    #[error("state description matches {0} states")]
    AmbiguousState(usize),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid state description `{0}`")]
    BadStateSpec(String),
}

/// Reverse adjacency: for every state, the (state, choice) pairs with a
/// transition into it.
#[derive(Debug)]
pub(crate) struct Predecessors {
    start: Vec<u32>,
    edges: Vec<(u32, u32)>,
}

impl Predecessors {
    pub(crate) fn of(&self, state: usize) -> &[(u32, u32)] {
        &self.edges[self.start[state] as usize..self.start[state + 1] as usize]
    }
}

/// Explicit-state DTMC or MDP.
///
/// Storage is compressed-sparse: states own a contiguous range of choices,
/// choices own a contiguous range of transitions. A DTMC is the special case
/// of exactly one choice per state. Every state carries a valuation of the
/// model variables, against which atomic propositions are evaluated.
#[derive(Debug)]
pub struct ProbModel {
    pub kind: ModelKind,
    pub vars: Vec<String>,
    pub initial: u32,
    valuations: Vec<i32>,
    state_choices: Vec<u32>,
    choice_transitions: Vec<u32>,
    dst: Vec<u32>,
    prob: Vec<f64>,
    label_start: Vec<u32>,
    labels: Vec<u16>,
    step_start: Vec<u32>,
    steps: Vec<(u16, u8)>,
    pub(crate) state_reward: Vec<f64>,
    pub(crate) choice_reward: Vec<f64>,
    preds: OnceLock<Predecessors>,
}

impl Clone for ProbModel {
    fn clone(&self) -> Self {
        ProbModel {
            kind: self.kind,
            vars: self.vars.clone(),
            initial: self.initial,
            valuations: self.valuations.clone(),
            state_choices: self.state_choices.clone(),
            choice_transitions: self.choice_transitions.clone(),
            dst: self.dst.clone(),
            prob: self.prob.clone(),
            label_start: self.label_start.clone(),
            labels: self.labels.clone(),
            step_start: self.step_start.clone(),
            steps: self.steps.clone(),
            state_reward: self.state_reward.clone(),
            choice_reward: self.choice_reward.clone(),
            preds: OnceLock::new(),
        }
    }
}

impl ProbModel {
    pub fn num_states(&self) -> usize {
        self.state_choices.len() - 1
    }

    pub fn num_choices(&self) -> usize {
        self.choice_transitions.len() - 1
    }

    pub fn num_transitions(&self) -> usize {
        self.dst.len()
    }

    pub fn choices(&self, state: usize) -> Range<usize> {
        self.state_choices[state] as usize..self.state_choices[state + 1] as usize
    }

    pub fn transitions(&self, choice: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.choice_transitions[choice] as usize..self.choice_transitions[choice + 1] as usize;
        self.dst[r.clone()]
            .iter()
            .zip(&self.prob[r])
            .map(|(d, p)| (*d as usize, *p))
    }

    /// Plans selected by the plan selection function in this choice
    /// (zero-based plan indices).
    pub fn choice_plans(&self, choice: usize) -> &[u16] {
        &self.labels[self.label_start[choice] as usize..self.label_start[choice + 1] as usize]
    }

    /// Plan steps entered by this choice, as (slot, one-based step).
    pub fn choice_steps(&self, choice: usize) -> &[(u16, u8)] {
        if self.step_start.is_empty() {
            return &[];
        }
        &self.steps[self.step_start[choice] as usize..self.step_start[choice + 1] as usize]
    }

    pub fn valuation(&self, state: usize) -> &[i32] {
        let n = self.vars.len();
        &self.valuations[state * n..(state + 1) * n]
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn state_reward(&self, state: usize) -> f64 {
        self.state_reward.get(state).copied().unwrap_or(0.0)
    }

    pub fn choice_reward(&self, choice: usize) -> f64 {
        self.choice_reward.get(choice).copied().unwrap_or(0.0)
    }

    pub fn has_rewards(&self) -> bool {
        !self.state_reward.is_empty() || !self.choice_reward.is_empty()
    }

    pub fn set_rewards(&mut self, state_reward: Vec<f64>, choice_reward: Vec<f64>) {
        assert!(state_reward.is_empty() || state_reward.len() == self.num_states());
        assert!(choice_reward.is_empty() || choice_reward.len() == self.num_choices());
        self.state_reward = state_reward;
        self.choice_reward = choice_reward;
    }

    pub fn max_choices(&self) -> usize {
        (0..self.num_states()).map(|s| self.choices(s).len()).max().unwrap_or(0)
    }

    /// Approximate heap footprint in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.valuations.len() * 4
            + self.state_choices.len() * 4
            + self.choice_transitions.len() * 4
            + self.dst.len() * 4
            + self.prob.len() * 8
            + self.label_start.len() * 4
            + self.labels.len() * 2
            + self.step_start.len() * 4
            + self.steps.len() * 3
            + self.state_reward.len() * 8
            + self.choice_reward.len() * 8
    }

    pub(crate) fn predecessors(&self) -> &Predecessors {
        self.preds.get_or_init(|| {
            let n = self.num_states();
            let mut count = vec![0u32; n + 1];
            for s in 0..n {
                for c in self.choices(s) {
                    for (d, _) in self.transitions(c) {
                        count[d + 1] += 1;
                    }
                }
            }
            for i in 0..n {
                count[i + 1] += count[i];
            }
            let mut fill = count.clone();
            let mut edges = vec![(0u32, 0u32); self.dst.len()];
            for s in 0..n {
                for c in self.choices(s) {
                    for (d, _) in self.transitions(c) {
                        edges[fill[d] as usize] = (s as u32, c as u32);
                        fill[d] += 1;
                    }
                }
            }
            Predecessors { start: count, edges }
        })
    }

    /// Checks the stochastic invariants of the model.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.num_states();
        for s in 0..n {
            let choices = self.choices(s);
            if choices.is_empty() {
                return Err(ModelError::NoChoices { state: s });
            }
            if self.kind == ModelKind::Dtmc && choices.len() != 1 {
                return Err(ModelError::DtmcBranching {
                    state: s,
                    choices: choices.len(),
                });
            }
            for (k, c) in choices.enumerate() {
                let mut sum = 0.0;
                for (d, p) in self.transitions(c) {
                    if d >= n {
                        return Err(ModelError::DanglingTransition { state: s, dst: d });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                    return Err(ModelError::NotStochastic {
                        state: s,
                        choice: k,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    /// Resolves a state description against the model.
    pub fn resolve_state(&self, spec: &StateSpec) -> Result<usize, ModelError> {
        match spec {
            StateSpec::Index(i) => {
                if *i < self.num_states() {
                    Ok(*i)
                } else {
                    Err(ModelError::UnknownState(format!("#{i}")))
                }
            }
            StateSpec::Assignments(pairs) => {
                let mut idx = Vec::with_capacity(pairs.len());
                for (name, value) in pairs {
                    let v = self
                        .var_index(name)
                        .ok_or_else(|| ModelError::UnknownVariable(name.clone()))?;
                    idx.push((v, *value));
                }
                let mut found = None;
                let mut count = 0;
                for s in 0..self.num_states() {
                    let val = self.valuation(s);
                    if idx.iter().all(|(v, x)| val[*v] == *x) {
                        count += 1;
                        found.get_or_insert(s);
                    }
                }
                match (found, count) {
                    (Some(s), 1) => Ok(s),
                    (None, _) => Err(ModelError::UnknownState(spec.to_string())),
                    (_, n) => Err(ModelError::AmbiguousState(n)),
                }
            }
        }
    }

    /// Finds the state with exactly this valuation.
    pub fn find_valuation(&self, valuation: &[i32]) -> Option<usize> {
        (0..self.num_states()).find(|&s| self.valuation(s) == valuation)
    }
}

/// A state designated by index (`#12` or `12`) or by variable assignments
/// (`a=1, plan_3=2` or `a=1 & plan_3=2`). Assignments may be partial but must
/// match exactly one state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateSpec {
    Index(usize),
    Assignments(Vec<(String, i32)>),
}

impl StateSpec {
    pub fn parse(text: &str) -> Result<StateSpec, ModelError> {
        let t = text.trim();
        let bad = || ModelError::BadStateSpec(text.to_string());
        if t.is_empty() {
            return Err(bad());
        }
        let digits = t.strip_prefix('#').unwrap_or(t);
        if digits.chars().all(|c| c.is_ascii_digit()) {
            return digits.parse().map(StateSpec::Index).map_err(|_| bad());
        }
        let mut pairs = Vec::new();
        for part in t.split([',', '&']) {
            let part = part.trim();
            let (name, value) = part.split_once('=').ok_or_else(bad)?;
            let name = name.trim();
            if name.is_empty()
                || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return Err(bad());
            }
            let value: i32 = value.trim().parse().map_err(|_| bad())?;
            pairs.push((name.to_string(), value));
        }
        Ok(StateSpec::Assignments(pairs))
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Index(i) => write!(f, "#{i}"),
            StateSpec::Assignments(pairs) => {
                for (i, (n, v)) in pairs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" & ")?;
                    }
                    write!(f, "{n}={v}")?;
                }
                Ok(())
            }
        }
    }
}

/// Incremental constructor. States must have their choices added in index
/// order; valuations may be registered ahead of expansion.
#[derive(Debug)]
pub struct ModelBuilder {
    kind: ModelKind,
    vars: Vec<String>,
    valuations: Vec<i32>,
    state_choices: Vec<u32>,
    choice_transitions: Vec<u32>,
    dst: Vec<u32>,
    prob: Vec<f64>,
    label_start: Vec<u32>,
    labels: Vec<u16>,
    step_start: Vec<u32>,
    steps: Vec<(u16, u8)>,
}

impl ModelBuilder {
    pub fn new(kind: ModelKind, vars: Vec<String>) -> Self {
        ModelBuilder {
            kind,
            vars,
            valuations: Vec::new(),
            state_choices: vec![0],
            choice_transitions: vec![0],
            dst: Vec::new(),
            prob: Vec::new(),
            label_start: vec![0],
            labels: Vec::new(),
            step_start: vec![0],
            steps: Vec::new(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn num_registered(&self) -> usize {
        if self.vars.is_empty() {
            0
        } else {
            self.valuations.len() / self.vars.len()
        }
    }

    /// Registers the valuation of the next state index.
    pub fn push_valuation(&mut self, valuation: &[i32]) {
        debug_assert_eq!(valuation.len(), self.vars.len());
        self.valuations.extend_from_slice(valuation);
    }

    /// Adds a choice to the state currently being expanded.
    pub fn push_choice(&mut self, plans: &[u16], steps: &[(u16, u8)], transitions: &[(u32, f64)]) {
        for (d, p) in transitions {
            self.dst.push(*d);
            self.prob.push(*p);
        }
        self.choice_transitions.push(self.dst.len() as u32);
        self.labels.extend_from_slice(plans);
        self.label_start.push(self.labels.len() as u32);
        self.steps.extend_from_slice(steps);
        self.step_start.push(self.steps.len() as u32);
    }

    /// Closes the current state after its choices were pushed.
    pub fn finish_state(&mut self) {
        self.state_choices.push((self.choice_transitions.len() - 1) as u32);
    }

    pub fn finish(self, initial: u32) -> ProbModel {
        ProbModel {
            kind: self.kind,
            vars: self.vars,
            initial,
            valuations: self.valuations,
            state_choices: self.state_choices,
            choice_transitions: self.choice_transitions,
            dst: self.dst,
            prob: self.prob,
            label_start: self.label_start,
            labels: self.labels,
            step_start: self.step_start,
            steps: self.steps,
            state_reward: Vec::new(),
            choice_reward: Vec::new(),
            preds: OnceLock::new(),
        }
    }
}

impl ProbModel {
    /// Copy of the model that starts in `state` and keeps only the choices of
    /// `state` accepted by `keep`. Other states and all rewards are unchanged.
    pub fn restrict(&self, state: usize, keep: impl Fn(usize) -> bool) -> ProbModel {
        let mut b = ModelBuilder::new(self.kind, self.vars.clone());
        b.valuations = self.valuations.clone();
        let mut choice_reward = Vec::new();
        for s in 0..self.num_states() {
            for c in self.choices(s) {
                if s == state && !keep(c) {
                    continue;
                }
                let t: Vec<(u32, f64)> = self.transitions(c).map(|(d, p)| (d as u32, p)).collect();
                b.push_choice(self.choice_plans(c), self.choice_steps(c), &t);
                if !self.choice_reward.is_empty() {
                    choice_reward.push(self.choice_reward[c]);
                }
            }
            b.finish_state();
        }
        let mut m = b.finish(state as u32);
        m.state_reward = self.state_reward.clone();
        m.choice_reward = choice_reward;
        m
    }
}

/// Plan labels and distribution of one choice.
pub type LabelledChoice = (Vec<u16>, Vec<(u32, f64)>);

impl ProbModel {
    /// Builds a model from nested choice lists, one valuation per state.
    /// Convenient for hand-made models; choices carry no plan labels.
    pub fn from_choices(
        kind: ModelKind,
        vars: Vec<String>,
        valuations: Vec<Vec<i32>>,
        initial: u32,
        choices: Vec<Vec<Vec<(u32, f64)>>>,
    ) -> ProbModel {
        let mut b = ModelBuilder::new(kind, vars);
        for v in &valuations {
            b.push_valuation(v);
        }
        for state in &choices {
            for c in state {
                b.push_choice(&[], &[], c);
            }
            b.finish_state();
        }
        b.finish(initial)
    }

    /// Like [`ProbModel::from_choices`] with a plan label on every choice.
    pub fn from_labelled_choices(
        kind: ModelKind,
        vars: Vec<String>,
        valuations: Vec<Vec<i32>>,
        initial: u32,
        choices: Vec<Vec<LabelledChoice>>,
    ) -> ProbModel {
        let mut b = ModelBuilder::new(kind, vars);
        for v in &valuations {
            b.push_valuation(v);
        }
        for state in &choices {
            for (plans, c) in state {
                b.push_choice(plans, &[], c);
            }
            b.finish_state();
        }
        b.finish(initial)
    }
}
