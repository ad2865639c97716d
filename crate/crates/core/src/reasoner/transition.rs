//! One reasoning cycle as a function of the closed-loop state.
//!
//! A cycle starts from the state left by the previous belief review and runs
//! `f_EV → f_PS → f_O → f_act`, then the environment step and the next
//! `f_BU`/`f_BR`. The simulator samples the environment step; the abstraction
//! enumerates it. Both go through the functions in this module.

use crate::agent_model::{
    ActionId, AgentSpec, AgentState, BeliefId, BeliefKind, Event, PlanId, SpecError, StepAction,
    Valuation,
};
use crate::env_model::{apply_branches, tick, Branch, BranchSet, CounterBank, CounterLayout};

/// Agent state plus the environment counters: the full Markov state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClosedState {
    pub agent: AgentState,
    pub counters: CounterBank,
}

impl ClosedState {
    pub fn initial(spec: &AgentSpec, layout: &CounterLayout) -> Self {
        ClosedState {
            agent: AgentState::initial(spec),
            counters: layout.idle(),
        }
    }
}

/// `f_EV`: pending events of the state.
pub fn events(state: &AgentState) -> Vec<Event> {
    state.event_list()
}

/// `f_PS`: for every pending event, the plans triggered by it whose context
/// holds. Events without applicable plans are dropped.
pub fn applicable_plans(spec: &AgentSpec, state: &AgentState) -> Vec<(Event, Vec<PlanId>)> {
    let mut out = Vec::new();
    for e in events(state) {
        let plans: Vec<PlanId> = spec
            .plans
            .iter()
            .filter(|p| p.trigger == e && p.context.eval(state.beliefs))
            .map(|p| p.id)
            .collect();
        if !plans.is_empty() {
            out.push((e, plans));
        }
    }
    out
}

/// All outcomes of `f_O`: one plan per event with applicable plans, in
/// lexicographic order of the per-event picks. Without applicable plans the
/// single outcome is the empty selection.
pub fn selection_choices(applicable: &[(Event, Vec<PlanId>)]) -> Vec<Vec<PlanId>> {
    let mut out = vec![Vec::new()];
    for (_, plans) in applicable {
        let mut next = Vec::with_capacity(out.len() * plans.len());
        for prefix in &out {
            for p in plans {
                let mut sel = prefix.clone();
                sel.push(*p);
                next.push(sel);
            }
        }
        out = next;
    }
    for sel in &mut out {
        sel.sort();
        sel.dedup();
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|sel| seen.insert(sel.clone()));
    out
}

/// Result of `f_act` for one selection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Acted {
    pub lambdas: Vec<u8>,
    /// External actions invoked this cycle, in slot order.
    pub invoked: Vec<ActionId>,
    /// Mental notes to apply at the next belief update.
    pub notes: Vec<(BeliefId, bool)>,
    /// Steps entered this cycle as (slot, one-based step).
    pub executed: Vec<(u16, u8)>,
    /// Reward of the entered steps and invoked actions.
    pub reward: f64,
}

fn step_done(spec: &AgentSpec, action: StepAction, beliefs: Valuation) -> bool {
    match action {
        StepAction::External(a) => {
            let fb = &spec.actions[a.index()].feedback;
            fb.outcomes.is_empty() || fb.outcomes.iter().any(|(atom, _)| beliefs.get(*atom))
        }
        StepAction::Note { .. } | StepAction::Interrupt(_) => true,
    }
}

/// `f_act`: advances every intention by at most one step.
///
/// `λ = k` means step `k` is in progress. A plan selected while idle enters
/// step 1; an intention whose current step completed enters the next one or
/// finishes (`λ = 0`). Entering a step performs it: mental notes are queued,
/// external actions invoked, interruptions reset the target plan after all
/// slots have moved.
pub fn execute_step(spec: &AgentSpec, state: &AgentState, selected: &[PlanId]) -> Acted {
    let mut acted = Acted {
        lambdas: state.lambdas.clone(),
        ..Acted::default()
    };
    let mut interrupts = Vec::new();
    for slot in 0..spec.slot_count() {
        let body = spec.slot_body(slot);
        let lambda = acted.lambdas[slot] as usize;
        let enter = if lambda == 0 {
            (slot < spec.plans.len() && selected.contains(&PlanId(slot as u16))).then_some(1)
        } else if lambda > body.len() {
            Some(1)
        } else if step_done(spec, body[lambda - 1].action, state.beliefs) {
            Some(lambda + 1)
        } else {
            None
        };
        let Some(k) = enter else { continue };
        if k > body.len() {
            acted.lambdas[slot] = 0;
            continue;
        }
        acted.lambdas[slot] = k as u8;
        let step = &body[k - 1];
        acted.executed.push((slot as u16, k as u8));
        acted.reward += step.reward.unwrap_or(0.0);
        match step.action {
            StepAction::External(a) => {
                acted.invoked.push(a);
                acted.reward += action_reward(spec, a);
            }
            StepAction::Note { atom, add } => acted.notes.push((atom, add)),
            StepAction::Interrupt(p) => interrupts.push(p),
        }
    }
    for p in interrupts {
        acted.lambdas[p.index()] = 0;
    }
    acted
}

fn action_reward(spec: &AgentSpec, a: ActionId) -> f64 {
    let decl = spec.actions[a.index()].reward.unwrap_or(0.0);
    let extra: f64 = spec
        .rewards
        .iter()
        .filter(|r| r.target == crate::agent_model::RewardTarget::Action(a))
        .map(|r| r.value)
        .sum();
    decl + extra
}

/// State reward of a belief valuation.
pub fn state_reward(spec: &AgentSpec, beliefs: Valuation) -> f64 {
    spec.rewards
        .iter()
        .filter_map(|r| match r.target {
            crate::agent_model::RewardTarget::Belief(b) if beliefs.get(b) => Some(r.value),
            _ => None,
        })
        .sum()
}

/// Environment branches of the cycle following `f_act`.
pub fn environment(spec: &AgentSpec, state: &ClosedState, acted: &Acted) -> BranchSet {
    tick(
        spec,
        &state.counters,
        state.agent.beliefs,
        state.agent.events,
        &acted.invoked,
    )
}

/// Logic rules to fixpoint, as the last part of `f_BU`. Returns the new
/// valuation and the (one-based) rules that changed it, in firing order.
///
/// Rules are applied in declaration order within a pass. More than
/// `|mental notes| + 1` changing passes means the rules oscillate.
pub fn apply_rules(spec: &AgentSpec, mut beliefs: Valuation) -> Result<(Valuation, Vec<usize>), SpecError> {
    let limit = spec.mental_count() + 1;
    let mut passes = 0;
    let mut all_fired = Vec::new();
    loop {
        let mut fired = Vec::new();
        for (i, rule) in spec.rules.iter().enumerate() {
            if rule.antecedent.eval(beliefs) {
                let prev = beliefs;
                for lit in &rule.consequent {
                    beliefs.set(lit.atom, !lit.negated);
                }
                if prev != beliefs {
                    fired.push(i + 1);
                }
            }
        }
        if fired.is_empty() {
            return Ok((beliefs, all_fired));
        }
        passes += 1;
        if passes > limit {
            fired.sort_unstable();
            fired.dedup();
            return Err(SpecError::RuleCycle {
                passes,
                rules: fired,
            });
        }
        for r in fired {
            if !all_fired.contains(&r) {
                all_fired.push(r);
            }
        }
    }
}

/// `f_BR`: the events between two valuations, in atom order.
pub fn belief_review(old: Valuation, new: Valuation) -> Vec<Event> {
    old.xor(new)
        .iter()
        .map(|a| if new.get(a) { Event::added(a) } else { Event::removed(a) })
        .collect()
}

/// What happened inside one belief update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateInfo {
    /// Percept and feedback atoms changed by the environment.
    pub external: Vec<Event>,
    /// Logic rules that changed the beliefs.
    pub fired: Vec<usize>,
}

/// `f_BU` for one joint environment branch, followed by `f_BR`.
///
/// Applies the environment changes, then the mental notes queued by
/// `f_act`, then `extra_notes` (injected by verification skills), then the
/// logic rules to fixpoint.
pub fn belief_update(
    spec: &AgentSpec,
    layout: &CounterLayout,
    state: &ClosedState,
    acted: &Acted,
    branches: &[Branch],
    extra_notes: &[(BeliefId, bool)],
) -> Result<(ClosedState, UpdateInfo), SpecError> {
    let mut counters = state.counters.clone();
    let mut beliefs = state.agent.beliefs;
    apply_branches(spec, layout, &mut counters, &mut beliefs, branches);
    let external = belief_review(state.agent.beliefs, beliefs);
    for (atom, add) in acted.notes.iter().chain(extra_notes) {
        debug_assert_eq!(spec.belief(*atom).kind, BeliefKind::Mental);
        beliefs.set(*atom, *add);
    }
    let (beliefs, fired) = apply_rules(spec, beliefs)?;
    let next = ClosedState {
        agent: AgentState {
            beliefs,
            events: beliefs.xor(state.agent.beliefs),
            lambdas: acted.lambdas.clone(),
        },
        counters,
    };
    Ok((next, UpdateInfo { external, fired }))
}

/// [`belief_update`] without the trace information.
pub fn complete(
    spec: &AgentSpec,
    layout: &CounterLayout,
    state: &ClosedState,
    acted: &Acted,
    branches: &[Branch],
    extra_notes: &[(BeliefId, bool)],
) -> Result<ClosedState, SpecError> {
    belief_update(spec, layout, state, acted, branches, extra_notes).map(|(s, _)| s)
}
