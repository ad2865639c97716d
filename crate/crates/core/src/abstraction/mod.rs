//! Exhaustive unfolding of the closed loop into a DTMC or MDP.
//!
//! States are discovered breadth-first. Each level is expanded in parallel
//! and merged sequentially in frontier order, so state numbering does not
//! depend on the number of workers.

mod io;
mod layout;
mod model;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use io::{read_model, write_model, ModelFileError};
pub use layout::StateLayout;
pub use model::{LabelledChoice, ModelBuilder, ModelError, ModelKind, ProbModel, StateSpec, DISTRIBUTION_TOLERANCE};

use crate::agent_model::{AgentSpec, Eligibility, PlanId, RewardDecl, RewardTarget, SpecError, StepAction};
use crate::pctl::{check_state_formula, CheckError, CheckOptions, StateFormula};
use crate::env_model::CounterLayout;
use crate::reasoner::{
    applicable_plans, check_initial_closure, complete, environment, execute_step,
    selection_choices, ClosedState,
};

pub const DEFAULT_MAX_STATES: usize = 5_000_000;

/// How plan-selection nondeterminism is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KindRequest {
    /// DTMC when the spec is eligible, MDP otherwise.
    #[default]
    Auto,
    /// DTMC; rejected unless the spec is eligible.
    Dtmc,
    /// MDP even for eligible specs.
    Mdp,
    /// DTMC under the first-declared selection policy.
    Determinized,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub kind: KindRequest,
    pub max_states: usize,
    pub max_depth: Option<usize>,
    /// Worker threads for frontier expansion; `None` uses rayon's default.
    pub workers: Option<usize>,
    /// Keep the packed-state index for later lookups.
    pub keep_index: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            kind: KindRequest::Auto,
            max_states: DEFAULT_MAX_STATES,
            max_depth: None,
            workers: None,
            keep_index: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("spec is not DTMC-eligible; clashing plans: {}", format_clashes(.clashes))]
    NotEligible { clashes: Vec<(PlanId, PlanId)> },
    #[error(
        "state space exceeds {limit} states (frontier {frontier}); most varied variables: {}",
        format_vars(.variables)
    )]
    StateExplosion {
        limit: usize,
        frontier: usize,
        variables: Vec<(String, usize)>,
    },
    #[error("exploration depth exceeds {0}")]
    DepthExceeded(usize),
    #[error("could not start worker pool: {0}")]
    Workers(String),
}

fn format_clashes(c: &[(PlanId, PlanId)]) -> String {
    c.iter().map(|(a, b)| format!("{a}/{b}")).collect::<Vec<_>>().join(", ")
}

fn format_vars(v: &[(String, usize)]) -> String {
    v.iter().map(|(n, k)| format!("{n} ({k} values)")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub kind: ModelKind,
    pub states: usize,
    pub choices: usize,
    pub transitions: usize,
    pub max_choices: usize,
    pub depth: usize,
    pub elapsed: Duration,
    pub memory_bytes: usize,
    pub eligibility: Eligibility,
}

/// Lookup from closed-loop states to model states.
#[derive(Debug, Clone)]
pub struct StateIndex {
    pub layout: StateLayout,
    map: HashMap<Box<[u8]>, u32>,
}

impl StateIndex {
    pub fn get(&self, state: &ClosedState) -> Option<usize> {
        self.map.get(&self.layout.pack(state)).map(|i| *i as usize)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Abstraction {
    pub model: ProbModel,
    pub report: BuildReport,
    pub index: Option<StateIndex>,
}

struct ChoiceOut {
    plans: Vec<u16>,
    steps: Vec<(u16, u8)>,
    succ: Vec<(Box<[u8]>, f64)>,
}

/// Unfolds the closed loop of `spec` into a probabilistic model.
pub fn build(spec: &AgentSpec, opts: &BuildOptions) -> Result<Abstraction, BuildError> {
    match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| BuildError::Workers(e.to_string()))?
            .install(|| build_inner(spec, opts)),
        None => build_inner(spec, opts),
    }
}

fn build_inner(spec: &AgentSpec, opts: &BuildOptions) -> Result<Abstraction, BuildError> {
    let start = Instant::now();
    spec.validate()?;
    check_initial_closure(spec)?;
    let eligibility = spec.dtmc_eligibility();
    let (kind, determinize) = match opts.kind {
        KindRequest::Auto if eligibility.eligible => (ModelKind::Dtmc, false),
        KindRequest::Auto | KindRequest::Mdp => (ModelKind::Mdp, false),
        KindRequest::Dtmc if eligibility.eligible => (ModelKind::Dtmc, false),
        KindRequest::Dtmc => {
            return Err(BuildError::NotEligible {
                clashes: eligibility.clashes,
            })
        }
        KindRequest::Determinized => (ModelKind::Dtmc, true),
    };

    let counters = CounterLayout::new(spec);
    let layout = StateLayout::new(spec, &counters);
    let mut builder = ModelBuilder::new(kind, layout.vars().to_vec());
    let mut index: HashMap<Box<[u8]>, u32> = HashMap::new();

    let s0 = ClosedState::initial(spec, &counters);
    let p0 = layout.pack(&s0);
    builder.push_valuation(&layout.valuation(&s0));
    index.insert(p0.clone(), 0);
    let mut frontier = vec![p0];
    let mut depth = 0;

    while !frontier.is_empty() {
        if let Some(limit) = opts.max_depth {
            if depth > limit {
                return Err(BuildError::DepthExceeded(limit));
            }
        }
        let expanded: Vec<Result<Vec<ChoiceOut>, BuildError>> = frontier
            .par_iter()
            .map(|packed| expand(spec, &counters, &layout, packed, kind, determinize))
            .collect();
        let mut next = Vec::new();
        for choices in expanded {
            for c in choices? {
                let mut trans: Vec<(u32, f64)> = Vec::with_capacity(c.succ.len());
                for (packed, p) in c.succ {
                    let id = match index.get(&packed) {
                        Some(id) => *id,
                        None => {
                            let id = index.len() as u32;
                            if index.len() >= opts.max_states {
                                return Err(explosion(&layout, opts.max_states, &next, &frontier));
                            }
                            let st = layout.unpack(&packed);
                            builder.push_valuation(&layout.valuation(&st));
                            index.insert(packed.clone(), id);
                            next.push(packed);
                            id
                        }
                    };
                    trans.push((id, p));
                }
                builder.push_choice(&c.plans, &c.steps, &trans);
            }
            builder.finish_state();
        }
        frontier = next;
        depth += 1;
    }

    let mut model = builder.finish(0);
    attach_rewards(&mut model, spec, &spec.rewards)?;
    let report = BuildReport {
        kind,
        states: model.num_states(),
        choices: model.num_choices(),
        transitions: model.num_transitions(),
        max_choices: model.max_choices(),
        depth,
        elapsed: start.elapsed(),
        memory_bytes: model.memory_bytes() + index.len() * (layout.width() + 24),
        eligibility,
    };
    log::info!(
        "built {} with {} states, {} choices, {} transitions in {:?}",
        kind,
        report.states,
        report.choices,
        report.transitions,
        report.elapsed
    );
    Ok(Abstraction {
        model,
        report,
        index: opts.keep_index.then_some(StateIndex { layout, map: index }),
    })
}

/// Populates the reward vectors of a model built from `spec`.
///
/// Belief declarations give state rewards in every state where the belief
/// holds. Action declarations, action rewards and step rewards are earned on
/// the choices that enter the corresponding plan step. All-zero rewards leave
/// the model without reward vectors.
pub fn attach_rewards(model: &mut ProbModel, spec: &AgentSpec, decls: &[RewardDecl]) -> Result<(), SpecError> {
    let mut state_terms = Vec::new();
    let mut action_extra = vec![0.0; spec.actions.len()];
    for d in decls {
        match d.target {
            RewardTarget::Belief(b) => {
                let name = &spec
                    .beliefs
                    .get(b.index())
                    .ok_or(SpecError::UnknownBeliefId(b.0))?
                    .name;
                let var = model
                    .var_index(name)
                    .ok_or_else(|| SpecError::UnknownBelief(name.clone()))?;
                state_terms.push((var, d.value));
            }
            RewardTarget::Action(a) => {
                *action_extra
                    .get_mut(a.index())
                    .ok_or(SpecError::UnknownAction(a.0))? += d.value;
            }
        }
    }
    let state_rewards: Vec<f64> = (0..model.num_states())
        .map(|s| {
            let val = model.valuation(s);
            state_terms.iter().filter(|(v, _)| val[*v] != 0).map(|(_, r)| r).sum()
        })
        .collect();
    let mut choice_rewards = Vec::with_capacity(model.num_choices());
    for c in 0..model.num_choices() {
        let mut r = 0.0;
        for &(slot, k) in model.choice_steps(c) {
            let step = spec
                .slot_body(slot as usize)
                .get(k as usize - 1)
                .ok_or(SpecError::UnknownPlan(slot as usize + 1))?;
            r += step.reward.unwrap_or(0.0);
            if let StepAction::External(a) = step.action {
                r += spec.actions[a.index()].reward.unwrap_or(0.0) + action_extra[a.index()];
            }
        }
        choice_rewards.push(r);
    }
    let keep = |v: Vec<f64>| if v.iter().any(|r| *r != 0.0) { v } else { Vec::new() };
    model.set_rewards(keep(state_rewards), keep(choice_rewards));
    Ok(())
}

/// Whether `state` satisfies a state formula (`plan_2=1 & plan_4=2`,
/// `mission_complete=1`, ...).
pub fn label(model: &ProbModel, state: usize, prop: &StateFormula) -> Result<bool, CheckError> {
    if state >= model.num_states() {
        return Err(ModelError::UnknownState(format!("#{state}")).into());
    }
    Ok(check_state_formula(model, prop, &CheckOptions::default())?[state])
}

fn expand(
    spec: &AgentSpec,
    counters: &CounterLayout,
    layout: &StateLayout,
    packed: &[u8],
    kind: ModelKind,
    determinize: bool,
) -> Result<Vec<ChoiceOut>, BuildError> {
    let state = layout.unpack(packed);
    let applicable = applicable_plans(spec, &state.agent);
    let mut choices = selection_choices(&applicable);
    if kind == ModelKind::Dtmc && choices.len() > 1 {
        if !determinize {
            // Unreachable for eligible specs; reported rather than hidden.
            let (_, plans) = applicable.iter().find(|(_, p)| p.len() > 1).expect("clash");
            return Err(BuildError::NotEligible {
                clashes: vec![(plans[0], plans[1])],
            });
        }
        choices.truncate(1);
    }
    let mut out = Vec::with_capacity(choices.len());
    for selected in choices {
        let acted = execute_step(spec, &state.agent, &selected);
        let branches = environment(spec, &state, &acted);
        let mut succ: Vec<(Box<[u8]>, f64)> = Vec::new();
        let mut pos: HashMap<Box<[u8]>, usize> = HashMap::new();
        let mut err = None;
        branches.for_each(|picked, p| {
            if err.is_some() {
                return;
            }
            match complete(spec, counters, &state, &acted, picked, &[]) {
                Ok(next) => {
                    let key = layout.pack(&next);
                    match pos.get(&key) {
                        Some(i) => succ[*i].1 += p,
                        None => {
                            pos.insert(key.clone(), succ.len());
                            succ.push((key, p));
                        }
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        out.push(ChoiceOut {
            plans: selected.iter().map(|p| p.0).collect(),
            steps: acted.executed,
            succ,
        });
    }
    Ok(out)
}

fn explosion(layout: &StateLayout, limit: usize, next: &[Box<[u8]>], frontier: &[Box<[u8]>]) -> BuildError {
    let sample: Vec<Vec<i32>> = frontier
        .iter()
        .chain(next)
        .take(100_000)
        .map(|p| layout.valuation(&layout.unpack(p)))
        .collect();
    let mut variables: Vec<(String, usize)> = layout
        .vars()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut values: Vec<i32> = sample.iter().map(|v| v[i]).collect();
            values.sort_unstable();
            values.dedup();
            (name.clone(), values.len())
        })
        .filter(|(_, k)| *k > 1)
        .collect();
    variables.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    variables.truncate(5);
    BuildError::StateExplosion {
        limit,
        frontier: frontier.len() + next.len(),
        variables,
    }
}
