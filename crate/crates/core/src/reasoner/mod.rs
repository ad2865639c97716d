//! Executable reasoning cycle.
//!
//! [`Engine`] runs the agent against sampled environment dynamics. The cycle
//! itself lives in [`transition`], shared with the abstraction so that every
//! simulated step is a transition of the built model.

pub mod transition;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent_model::{AgentSpec, BeliefId, Event, PlanId, Polarity, SpecError};
use crate::env_model::CounterLayout;
pub use transition::{
    applicable_plans, apply_rules, belief_review, belief_update, complete, environment, events,
    execute_step, selection_choices, state_reward, Acted, ClosedState, UpdateInfo,
};

/// Inputs available to a plan selection policy.
pub struct SelectionContext<'a> {
    pub spec: &'a AgentSpec,
    pub cycle: u64,
    pub state: &'a ClosedState,
    pub applicable: &'a [(Event, Vec<PlanId>)],
    /// Candidate selections, as produced by [`selection_choices`].
    pub choices: &'a [Vec<PlanId>],
}

/// Plan selection policy `f_O`. Returns an index into `ctx.choices`.
/// Only consulted when there is more than one choice.
pub trait PlanSelector {
    fn name(&self) -> &str;
    fn select(&mut self, ctx: &SelectionContext<'_>) -> usize;
}

/// Picks the first applicable plan of every event in declaration order.
#[derive(Debug, Default, Clone, Copy)]
pub struct FirstDeclared;

impl PlanSelector for FirstDeclared {
    fn name(&self) -> &str {
        "first"
    }

    fn select(&mut self, _ctx: &SelectionContext<'_>) -> usize {
        0
    }
}

/// Uniform choice among applicable plans of every event (equivalently,
/// uniform over the product of choices).
#[derive(Debug, Clone)]
pub struct UniformRandom {
    rng: ChaCha8Rng,
}

impl UniformRandom {
    pub fn new(seed: u64) -> Self {
        UniformRandom {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl PlanSelector for UniformRandom {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> usize {
        self.rng.gen_range(0..ctx.choices.len())
    }
}

/// Work performed at the start of a cycle, before plan selection. Returned
/// mental notes are applied at the next belief update.
pub trait CycleHook {
    fn before_selection(&mut self, spec: &AgentSpec, cycle: u64, state: &ClosedState) -> Vec<(BeliefId, bool)>;
}

/// Record of one reasoning cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleTrace {
    pub cycle: u64,
    /// Environment changes applied at the end of the cycle.
    pub percepts: Vec<String>,
    /// Logic rules (one-based) that fired in the cycle's belief update.
    pub fired_rules: Vec<usize>,
    /// Events handled this cycle, as `+name` / `-name`.
    pub events: Vec<String>,
    /// Applicable plans per event, as plan numbers.
    pub applicable: Vec<(String, Vec<usize>)>,
    pub selected: Vec<usize>,
    /// Steps entered, as `plan_N:k` (`plan_0` for initial actions).
    pub executed: Vec<String>,
    pub invoked: Vec<String>,
    pub injected: Vec<String>,
    /// Beliefs holding after the cycle's belief review.
    pub beliefs: Vec<String>,
    pub lambdas: Vec<u8>,
    pub reward: f64,
}

impl CycleTrace {
    /// One-line text rendering.
    pub fn to_line(&self) -> String {
        let list = |v: &[String]| if v.is_empty() { "-".to_string() } else { v.join(",") };
        let selected: Vec<String> = self.selected.iter().map(|p| format!("plan_{p}")).collect();
        let lambdas: Vec<String> = self.lambdas.iter().map(u8::to_string).collect();
        format!(
            "cycle={} events={} selected={} executed={} invoked={} beliefs={} lambdas={} reward={}",
            self.cycle,
            list(&self.events),
            list(&selected),
            list(&self.executed),
            list(&self.invoked),
            list(&self.beliefs),
            lambdas.join(","),
            self.reward
        )
    }
}

pub fn event_name(spec: &AgentSpec, e: Event) -> String {
    let sign = match e.polarity {
        Polarity::Added => '+',
        Polarity::Removed => '-',
    };
    format!("{sign}{}", spec.belief(e.atom).name)
}

/// Seeded simulator of the closed loop.
pub struct Engine<'s> {
    spec: &'s AgentSpec,
    layout: CounterLayout,
    state: ClosedState,
    cycle: u64,
    rng: ChaCha8Rng,
    selector: Box<dyn PlanSelector + 's>,
    hooks: Vec<Box<dyn CycleHook + 's>>,
}

impl<'s> Engine<'s> {
    /// Fails if the initial beliefs are not closed under the logic rules.
    pub fn new(spec: &'s AgentSpec, seed: u64, selector: Box<dyn PlanSelector + 's>) -> Result<Self, SpecError> {
        spec.validate()?;
        let layout = CounterLayout::new(spec);
        let state = ClosedState::initial(spec, &layout);
        check_initial_closure(spec)?;
        Ok(Engine {
            spec,
            layout,
            state,
            cycle: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            selector,
            hooks: Vec::new(),
        })
    }

    pub fn add_hook(&mut self, hook: Box<dyn CycleHook + 's>) {
        self.hooks.push(hook);
    }

    pub fn state(&self) -> &ClosedState {
        &self.state
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn selector_name(&self) -> &str {
        self.selector.name()
    }

    /// Runs one reasoning cycle.
    pub fn step(&mut self) -> Result<CycleTrace, SpecError> {
        let spec = self.spec;
        let mut injected = Vec::new();
        for h in &mut self.hooks {
            injected.extend(h.before_selection(spec, self.cycle, &self.state));
        }
        let applicable = applicable_plans(spec, &self.state.agent);
        let choices = selection_choices(&applicable);
        let pick = if choices.len() == 1 {
            0
        } else {
            let ctx = SelectionContext {
                spec,
                cycle: self.cycle,
                state: &self.state,
                applicable: &applicable,
                choices: &choices,
            };
            self.selector.select(&ctx).min(choices.len() - 1)
        };
        let selected = &choices[pick];
        let acted = execute_step(spec, &self.state.agent, selected);
        let branches = environment(spec, &self.state, &acted).sample(&mut self.rng);
        let (next, info) = belief_update(spec, &self.layout, &self.state, &acted, &branches, &injected)?;

        let trace = CycleTrace {
            cycle: self.cycle,
            percepts: info.external.iter().map(|e| event_name(spec, *e)).collect(),
            fired_rules: info.fired,
            events: events(&self.state.agent).into_iter().map(|e| event_name(spec, e)).collect(),
            applicable: applicable
                .iter()
                .map(|(e, ps)| (event_name(spec, *e), ps.iter().map(|p| p.number()).collect()))
                .collect(),
            selected: selected.iter().map(|p| p.number()).collect(),
            executed: acted
                .executed
                .iter()
                .map(|(slot, k)| format!("{}:{k}", spec.slot_name(*slot as usize)))
                .collect(),
            invoked: acted.invoked.iter().map(|a| spec.actions[a.index()].name.clone()).collect(),
            injected: injected
                .iter()
                .map(|(b, add)| format!("{}{}", if *add { '+' } else { '-' }, spec.belief(*b).name))
                .collect(),
            beliefs: next.agent.beliefs.iter().map(|b| spec.belief(b).name.clone()).collect(),
            lambdas: next.agent.lambdas.clone(),
            reward: state_reward(spec, self.state.agent.beliefs) + acted.reward,
        };
        self.state = next;
        self.cycle += 1;
        Ok(trace)
    }

    pub fn run(&mut self, cycles: u64) -> Result<Vec<CycleTrace>, SpecError> {
        (0..cycles).map(|_| self.step()).collect()
    }
}

/// The initial belief base must already be a fixpoint of the rules.
pub fn check_initial_closure(spec: &AgentSpec) -> Result<(), SpecError> {
    let (closed, _) = apply_rules(spec, spec.initial_beliefs)?;
    if closed != spec.initial_beliefs {
        let rule = spec
            .rules
            .iter()
            .position(|r| {
                r.antecedent.eval(spec.initial_beliefs)
                    && r.consequent.iter().any(|l| spec.initial_beliefs.get(l.atom) == l.negated)
            })
            .map_or(0, |i| i + 1);
        return Err(SpecError::InitialBeliefsViolateRule { rule });
    }
    Ok(())
}
