//! Explicit-state PCTL model checking.
//!
//! Unbounded reachability uses the usual graph precomputations (states with
//! probability exactly 0 or 1) followed by Gauss-Seidel value iteration on the
//! remaining states. Bounded operators iterate exactly `k` times.

use std::collections::VecDeque;

use super::{PathFormula, Quantity, Query, RewardPath, StateFormula};
use crate::abstraction::{ModelError, ModelKind, ProbModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Absolute convergence threshold on the per-sweep change.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            epsilon: 1e-6,
            max_iterations: 1_000_000,
        }
    }
}

/// Which scheduler resolves nondeterminism. Irrelevant on a DTMC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimum {
    Min,
    Max,
}

impl Optimum {
    fn pick(self, a: f64, b: f64) -> f64 {
        match self {
            Optimum::Min => a.min(b),
            Optimum::Max => a.max(b),
        }
    }

    fn start(self) -> f64 {
        match self {
            Optimum::Min => f64::INFINITY,
            Optimum::Max => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckError {
    #[error("unknown variable `{0}` in query")]
    UnknownVariable(String),
    #[error("unknown label \"{0}\"")]
    UnknownLabel(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    /// Value at the queried state; 1/0 for qualitative queries and
    /// `f64::INFINITY` for unbounded expected rewards.
    pub value: f64,
    pub state_values: Vec<f64>,
    /// Truth at the queried state, for qualitative queries.
    pub satisfied: Option<bool>,
    pub sat: Option<Vec<bool>>,
    pub infinite: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Default)]
struct Stats {
    iterations: usize,
    residual: f64,
}

/// Checks a query at the initial state.
pub fn check(model: &ProbModel, query: &Query, opts: &CheckOptions) -> Result<CheckResult, CheckError> {
    check_from(model, query, model.initial as usize, opts)
}

/// Checks a query and reports its value at `state`.
pub fn check_from(
    model: &ProbModel,
    query: &Query,
    state: usize,
    opts: &CheckOptions,
) -> Result<CheckResult, CheckError> {
    if state >= model.num_states() {
        return Err(ModelError::UnknownState(format!("#{state}")).into());
    }
    type_check(model, query)?;
    let mut stats = Stats::default();
    let opt = |q: Quantity| match q {
        Quantity::Min => Optimum::Min,
        _ => Optimum::Max,
    };
    let (values, sat) = match query {
        Query::Prob { quantity, path } => (path_values(model, path, opt(*quantity), opts, &mut stats)?, None),
        Query::Reward { quantity, path } => (reward_values(model, path, opt(*quantity), opts, &mut stats)?, None),
        Query::State(f) => {
            let sat = eval_state(model, f, opts, &mut stats)?;
            (sat.iter().map(|b| f64::from(u8::from(*b))).collect(), Some(sat))
        }
    };
    let value = values[state];
    Ok(CheckResult {
        value,
        satisfied: sat.as_ref().map(|s| s[state]),
        sat,
        infinite: value.is_infinite(),
        state_values: values,
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

/// Rejects queries whose quantifier does not fit the model kind and queries
/// over unknown variables or labels.
pub fn type_check(model: &ProbModel, query: &Query) -> Result<(), CheckError> {
    if let Some(q) = query.quantity() {
        let op = if matches!(query, Query::Prob { .. }) { 'P' } else { 'R' };
        match (model.kind, q) {
            (ModelKind::Mdp, Quantity::Value) => {
                return Err(CheckError::Type(format!(
                    "{op}=? is undefined on an MDP; use {op}min=? or {op}max=?"
                )))
            }
            (ModelKind::Dtmc, Quantity::Min | Quantity::Max) => {
                return Err(CheckError::Type(format!(
                    "{op}min=?/{op}max=? apply to MDPs only; use {op}=? on a DTMC"
                )))
            }
            _ => {}
        }
    }
    for v in query.variables() {
        if model.var_index(&v).is_none() {
            return Err(CheckError::UnknownVariable(v));
        }
    }
    Ok(())
}

/// Satisfaction set of a state formula.
pub fn check_state_formula(
    model: &ProbModel,
    formula: &StateFormula,
    opts: &CheckOptions,
) -> Result<Vec<bool>, CheckError> {
    let mut vars = Vec::new();
    formula.variables(&mut vars);
    if let Some(v) = vars.into_iter().find(|v| model.var_index(v).is_none()) {
        return Err(CheckError::UnknownVariable(v));
    }
    eval_state(model, formula, opts, &mut Stats::default())
}

fn eval_state(
    model: &ProbModel,
    f: &StateFormula,
    opts: &CheckOptions,
    stats: &mut Stats,
) -> Result<Vec<bool>, CheckError> {
    let n = model.num_states();
    Ok(match f {
        StateFormula::True => vec![true; n],
        StateFormula::False => vec![false; n],
        StateFormula::Atom(a) => {
            let v = model
                .var_index(&a.var)
                .ok_or_else(|| CheckError::UnknownVariable(a.var.clone()))?;
            (0..n)
                .map(|s| a.op.eval(i64::from(model.valuation(s)[v]), a.value))
                .collect()
        }
        StateFormula::Label(l) => match l.as_str() {
            "init" => (0..n).map(|s| s == model.initial as usize).collect(),
            _ => return Err(CheckError::UnknownLabel(l.clone())),
        },
        StateFormula::Not(a) => eval_state(model, a, opts, stats)?.into_iter().map(|b| !b).collect(),
        StateFormula::And(a, b) => {
            let x = eval_state(model, a, opts, stats)?;
            let y = eval_state(model, b, opts, stats)?;
            x.into_iter().zip(y).map(|(p, q)| p && q).collect()
        }
        StateFormula::Or(a, b) => {
            let x = eval_state(model, a, opts, stats)?;
            let y = eval_state(model, b, opts, stats)?;
            x.into_iter().zip(y).map(|(p, q)| p || q).collect()
        }
        StateFormula::Prob { cmp, bound, path } => {
            // A lower bound must hold under every scheduler, so it is decided
            // by the minimum; an upper bound by the maximum.
            let opt = if cmp.needs_min() { Optimum::Min } else { Optimum::Max };
            path_values(model, path, opt, opts, stats)?
                .into_iter()
                .map(|x| cmp.holds(x, *bound))
                .collect()
        }
        StateFormula::Reward { cmp, bound, path } => {
            let opt = if cmp.needs_min() { Optimum::Min } else { Optimum::Max };
            reward_values(model, path, opt, opts, stats)?
                .into_iter()
                .map(|x| cmp.holds(x, *bound))
                .collect()
        }
    })
}

fn path_values(
    model: &ProbModel,
    path: &PathFormula,
    opt: Optimum,
    opts: &CheckOptions,
    stats: &mut Stats,
) -> Result<Vec<f64>, CheckError> {
    match path {
        PathFormula::Next(a) => {
            let sat = eval_state(model, a, opts, stats)?;
            let x: Vec<f64> = sat.iter().map(|b| f64::from(u8::from(*b))).collect();
            Ok((0..model.num_states()).map(|s| backup(model, s, &x, opt)).collect())
        }
        PathFormula::Until { lhs, rhs, bound } => {
            let l = eval_state(model, lhs, opts, stats)?;
            let r = eval_state(model, rhs, opts, stats)?;
            match bound {
                Some(k) => {
                    stats.iterations = stats.iterations.max(*k as usize);
                    Ok(check_bounded(model, &l, &r, *k, opt))
                }
                None => {
                    let out = check_unbounded(model, &l, &r, opt, opts)?;
                    stats.iterations = stats.iterations.max(out.iterations);
                    stats.residual = stats.residual.max(out.residual);
                    Ok(out.values)
                }
            }
        }
    }
}

/// `opt_c Σ_d P(s, c, d) · x[d]`.
fn backup(model: &ProbModel, s: usize, x: &[f64], opt: Optimum) -> f64 {
    let mut best = opt.start();
    for c in model.choices(s) {
        let v: f64 = model.transitions(c).map(|(d, p)| p * x[d]).sum();
        best = opt.pick(best, v);
    }
    best
}

/// Probability of `lhs U<=k rhs` from every state, by exactly `k` backward
/// iterations.
pub fn check_bounded(model: &ProbModel, lhs: &[bool], rhs: &[bool], k: u32, opt: Optimum) -> Vec<f64> {
    let n = model.num_states();
    let mut x: Vec<f64> = rhs.iter().map(|b| f64::from(u8::from(*b))).collect();
    let mut next = x.clone();
    for _ in 0..k {
        for s in 0..n {
            next[s] = if rhs[s] {
                1.0
            } else if !lhs[s] {
                0.0
            } else {
                backup(model, s, &x, opt)
            };
        }
        std::mem::swap(&mut x, &mut next);
    }
    x
}

/// Values computed by iteration together with convergence data.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterated {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Probability of `lhs U rhs` from every state.
pub fn check_unbounded(
    model: &ProbModel,
    lhs: &[bool],
    rhs: &[bool],
    opt: Optimum,
    opts: &CheckOptions,
) -> Result<Iterated, CheckError> {
    let n = model.num_states();
    let (no, yes) = match opt {
        Optimum::Max => {
            let reach = reach_exists(model, lhs, rhs);
            (invert(&reach), prob1e(model, lhs, rhs))
        }
        Optimum::Min => {
            let reach = reach_forall(model, lhs, rhs);
            let no = invert(&reach);
            (no.clone(), prob1a(model, lhs, rhs, &no))
        }
    };
    let mut x: Vec<f64> = yes.iter().map(|b| f64::from(u8::from(*b))).collect();
    let maybe: Vec<usize> = (0..n).filter(|&s| !no[s] && !yes[s]).collect();
    let (iterations, residual) = iterate(&maybe, &mut x, opts, |s, x| backup(model, s, x, opt))?;
    Ok(Iterated {
        values: x,
        iterations,
        residual,
    })
}

fn iterate(
    states: &[usize],
    x: &mut [f64],
    opts: &CheckOptions,
    mut update: impl FnMut(usize, &[f64]) -> f64,
) -> Result<(usize, f64), CheckError> {
    if states.is_empty() {
        return Ok((0, 0.0));
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut residual: f64 = 0.0;
        for &s in states {
            let v = update(s, x);
            residual = residual.max((v - x[s]).abs());
            x[s] = v;
        }
        if residual < opts.epsilon {
            return Ok((iterations, residual));
        }
        if iterations >= opts.max_iterations || !residual.is_finite() {
            return Err(CheckError::NoConvergence { iterations, residual });
        }
    }
}

fn invert(v: &[bool]) -> Vec<bool> {
    v.iter().map(|b| !b).collect()
}

/// States from which `rhs` is reachable through `lhs` states under some
/// scheduler (complement: maximal probability 0).
fn reach_exists(model: &ProbModel, lhs: &[bool], rhs: &[bool]) -> Vec<bool> {
    let preds = model.predecessors();
    let mut r = rhs.to_vec();
    let mut queue: VecDeque<usize> = (0..r.len()).filter(|&s| r[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, _) in preds.of(t) {
            let s = s as usize;
            if !r[s] && lhs[s] {
                r[s] = true;
                queue.push_back(s);
            }
        }
    }
    r
}

/// States from which every scheduler reaches `rhs` through `lhs` states with
/// positive probability (complement: minimal probability 0).
fn reach_forall(model: &ProbModel, lhs: &[bool], rhs: &[bool]) -> Vec<bool> {
    let preds = model.predecessors();
    let n = model.num_states();
    let mut r = rhs.to_vec();
    let mut hit = vec![false; model.num_choices()];
    let mut count = vec![0usize; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| r[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, c) in preds.of(t) {
            let (s, c) = (s as usize, c as usize);
            if hit[c] {
                continue;
            }
            hit[c] = true;
            count[s] += 1;
            if !r[s] && lhs[s] && count[s] == model.choices(s).len() {
                r[s] = true;
                queue.push_back(s);
            }
        }
    }
    r
}

/// States where some scheduler reaches `rhs` through `lhs` almost surely.
fn prob1e(model: &ProbModel, lhs: &[bool], rhs: &[bool]) -> Vec<bool> {
    let preds = model.predecessors();
    let n = model.num_states();
    let mut u = vec![true; n];
    loop {
        let stay: Vec<bool> = (0..model.num_choices())
            .map(|c| model.transitions(c).all(|(d, _)| u[d]))
            .collect();
        let mut r = rhs.to_vec();
        let mut queue: VecDeque<usize> = (0..n).filter(|&s| r[s]).collect();
        while let Some(t) = queue.pop_front() {
            for &(s, c) in preds.of(t) {
                let s = s as usize;
                if !r[s] && u[s] && lhs[s] && stay[c as usize] {
                    r[s] = true;
                    queue.push_back(s);
                }
            }
        }
        if r == u {
            return u;
        }
        u = r;
    }
}

/// States where every scheduler reaches `rhs` through `lhs` almost surely:
/// those that cannot reach a minimal-probability-0 state while still
/// undecided.
fn prob1a(model: &ProbModel, lhs: &[bool], rhs: &[bool], zero: &[bool]) -> Vec<bool> {
    let preds = model.predecessors();
    let mut bad = zero.to_vec();
    let mut queue: VecDeque<usize> = (0..bad.len()).filter(|&s| bad[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, _) in preds.of(t) {
            let s = s as usize;
            if !bad[s] && lhs[s] && !rhs[s] {
                bad[s] = true;
                queue.push_back(s);
            }
        }
    }
    invert(&bad)
}

/// Expected reward values for `C<=k` or `F φ` from every state.
///
/// State rewards are earned in the state being left and choice rewards on the
/// choice taken. For `F φ`, states that miss the target with positive
/// probability under the relevant scheduler get `f64::INFINITY`.
pub fn check_reward(
    model: &ProbModel,
    path: &RewardPath,
    opt: Optimum,
    opts: &CheckOptions,
) -> Result<Vec<f64>, CheckError> {
    reward_values(model, path, opt, opts, &mut Stats::default())
}

fn reward_values(
    model: &ProbModel,
    path: &RewardPath,
    opt: Optimum,
    opts: &CheckOptions,
    stats: &mut Stats,
) -> Result<Vec<f64>, CheckError> {
    let n = model.num_states();
    let step = |s: usize, x: &[f64], allowed: Option<&[bool]>| {
        let mut best = opt.start();
        for c in model.choices(s) {
            if let Some(ok) = allowed {
                if !model.transitions(c).all(|(d, _)| ok[d]) {
                    continue;
                }
            }
            let v: f64 = model.choice_reward(c) + model.transitions(c).map(|(d, p)| p * x[d]).sum::<f64>();
            best = opt.pick(best, v);
        }
        model.state_reward(s) + best
    };
    match path {
        RewardPath::Cumulative(k) => {
            let mut x = vec![0.0; n];
            let mut next = x.clone();
            for _ in 0..*k {
                for (s, slot) in next.iter_mut().enumerate() {
                    *slot = step(s, &x, None);
                }
                std::mem::swap(&mut x, &mut next);
            }
            stats.iterations = stats.iterations.max(*k as usize);
            Ok(x)
        }
        RewardPath::Reach(target) => {
            let goal = eval_state(model, target, opts, stats)?;
            let all = vec![true; n];
            let finite = match opt {
                Optimum::Min => prob1e(model, &all, &goal),
                Optimum::Max => {
                    let zero = invert(&reach_forall(model, &all, &goal));
                    prob1a(model, &all, &goal, &zero)
                }
            };
            let mut x: Vec<f64> = (0..n)
                .map(|s| if finite[s] { 0.0 } else { f64::INFINITY })
                .collect();
            let states: Vec<usize> = (0..n).filter(|&s| finite[s] && !goal[s]).collect();
            let (iterations, residual) = iterate(&states, &mut x, opts, |s, x| step(s, x, Some(&finite)))?;
            stats.iterations = stats.iterations.max(iterations);
            stats.residual = stats.residual.max(residual);
            Ok(x)
        }
    }
}
