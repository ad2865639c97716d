//! Run-time verification against the design-time model.
//!
//! Two modes share one [`ModelView`]: verification skills check queries from
//! the live state and turn the answers into mental notes, and
//! [`VerifiedSelector`] picks, for every event with several applicable plans,
//! the plan whose fixed first choice scores best on an objective query.

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, warn};

use crate::abstraction::{ModelKind, ProbModel, StateIndex};
use crate::agent_model::{AgentSpec, BeliefId, Direction, Event, PlanId, SkillDecl, StepAction, Valuation};
use crate::pctl::{check_from, CheckError, CheckOptions, Quantity, Query};
use crate::reasoner::{ClosedState, PlanSelector, SelectionContext};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("live state is not a state of the model")]
    UnknownState,
    #[error("objective `{0}` is not a quantitative query")]
    NotQuantitative(String),
    #[error("no choice of state {state} selects {plan}")]
    NoChoice { state: usize, plan: PlanId },
    #[error(transparent)]
    Check(#[from] CheckError),
}

/// How nondeterminism after the fixed first choice is resolved when an
/// objective is written as `P=?`/`R=?` against an MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Future {
    /// Best case (`Pmax`/`Rmax`).
    #[default]
    Optimistic,
    /// Worst case (`Pmin`/`Rmin`).
    Pessimistic,
}

impl Future {
    fn quantity(self) -> Quantity {
        match self {
            Future::Optimistic => Quantity::Max,
            Future::Pessimistic => Quantity::Min,
        }
    }
}

/// Replaces `=?` by the quantity of `future` on MDPs; explicit `min`/`max`
/// and DTMC queries are left alone.
pub fn resolve_quantity(query: &Query, kind: ModelKind, future: Future) -> Query {
    let mut q = query.clone();
    if kind == ModelKind::Mdp {
        if let Query::Prob { quantity, .. } | Query::Reward { quantity, .. } = &mut q {
            if *quantity == Quantity::Value {
                *quantity = future.quantity();
            }
        }
    }
    q
}

/// The design-time model together with the lookup from live states.
///
/// Beliefs only ever written by skills are constant in the model, so they
/// are reset to their initial value before lookup.
#[derive(Debug)]
pub struct ModelView {
    pub model: ProbModel,
    pub index: StateIndex,
    skill_only: Valuation,
    initial_beliefs: Valuation,
}

impl ModelView {
    pub fn new(spec: &AgentSpec, model: ProbModel, index: StateIndex) -> Self {
        ModelView {
            model,
            index,
            skill_only: skill_only_atoms(spec),
            initial_beliefs: spec.initial_beliefs,
        }
    }

    /// Model state matching the live state, if the model contains it.
    pub fn lookup(&self, state: &ClosedState) -> Option<usize> {
        let mut s = state.clone();
        for b in self.skill_only.iter() {
            s.agent.beliefs.set(b, self.initial_beliefs.get(b));
            s.agent.events.set(b, false);
        }
        self.index.get(&s)
    }
}

/// Skill targets that no plan step, initial action or rule writes.
pub fn skill_only_atoms(spec: &AgentSpec) -> Valuation {
    let mut out = Valuation::EMPTY;
    for s in &spec.runtime.skills {
        out.set(s.target, true);
    }
    let steps = spec.plans.iter().flat_map(|p| &p.body).chain(&spec.initial_actions);
    for step in steps {
        if let StepAction::Note { atom, .. } = step.action {
            out.set(atom, false);
        }
    }
    for r in &spec.rules {
        for l in &r.consequent {
            out.set(l.atom, false);
        }
    }
    out
}

/// Queries whose answers become mental notes, checked every `cadence`
/// cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSkill {
    pub queries: Vec<SkillDecl>,
    pub cadence: u32,
    pub future: Future,
}

impl VerificationSkill {
    pub fn from_spec(spec: &AgentSpec) -> Self {
        VerificationSkill {
            queries: spec.runtime.skills.clone(),
            cadence: spec.runtime.cadence.unwrap_or(1).max(1),
            future: Future::default(),
        }
    }

    pub fn due(&self, cycle: u64) -> bool {
        cycle.is_multiple_of(u64::from(self.cadence.max(1)))
    }
}

/// Checks every skill query at `state`: `+target` when the value satisfies
/// the threshold, `-target` otherwise. A state missing from the model or a
/// failing query yields no change for that query and a warning.
pub fn skill_step(
    model: &ProbModel,
    state: Option<usize>,
    skill: &VerificationSkill,
    opts: &CheckOptions,
) -> Vec<(BeliefId, bool)> {
    let Some(state) = state else {
        if !skill.queries.is_empty() {
            warn!("verification skill skipped: live state is not in the model");
        }
        return Vec::new();
    };
    let mut out = Vec::new();
    for decl in &skill.queries {
        let q = resolve_quantity(&decl.query, model.kind, skill.future);
        match check_from(model, &q, state, opts) {
            Ok(r) => out.push((decl.target, decl.cmp.holds(r.value, decl.threshold))),
            Err(e) => warn!("verification skill `{}` skipped: {e}", decl.query),
        }
    }
    out
}

/// Synchronous skill execution as a reasoning-cycle hook.
pub struct SkillRunner {
    view: Arc<ModelView>,
    skill: VerificationSkill,
    opts: CheckOptions,
}

impl SkillRunner {
    pub fn new(view: Arc<ModelView>, skill: VerificationSkill, opts: CheckOptions) -> Self {
        SkillRunner { view, skill, opts }
    }
}

impl crate::reasoner::CycleHook for SkillRunner {
    fn before_selection(&mut self, _spec: &AgentSpec, cycle: u64, state: &ClosedState) -> Vec<(BeliefId, bool)> {
        if self.skill.queries.is_empty() || !self.skill.due(cycle) {
            return Vec::new();
        }
        skill_step(&self.view.model, self.view.lookup(state), &self.skill, &self.opts)
    }
}

/// Skill results computed off the reasoning thread.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillReport {
    /// Cycle whose state was checked.
    pub cycle: u64,
    pub changes: Vec<(BeliefId, bool)>,
}

struct Job {
    cycle: u64,
    state: ClosedState,
}

/// Runs skill checks on a worker thread. The reasoning cycle never waits:
/// a check is submitted when due and no other check is running, and its
/// notes are injected at the first cycle that finds it finished.
pub struct SkillWorker {
    jobs: Option<Sender<Job>>,
    results: Receiver<SkillReport>,
    handle: Option<JoinHandle<()>>,
    in_flight: bool,
    pending: Vec<SkillReport>,
    skill: VerificationSkill,
    log: Vec<(u64, SkillReport)>,
}

impl SkillWorker {
    pub fn spawn(view: Arc<ModelView>, skill: VerificationSkill, opts: CheckOptions) -> Self {
        let (job_tx, job_rx) = mpsc::channel::<Job>();
        let (res_tx, res_rx) = mpsc::channel();
        let worker_skill = skill.clone();
        let handle = std::thread::spawn(move || {
            for job in job_rx {
                let changes = skill_step(&view.model, view.lookup(&job.state), &worker_skill, &opts);
                if res_tx.send(SkillReport { cycle: job.cycle, changes }).is_err() {
                    break;
                }
            }
        });
        SkillWorker {
            jobs: Some(job_tx),
            results: res_rx,
            handle: Some(handle),
            in_flight: false,
            pending: Vec::new(),
            skill,
            log: Vec::new(),
        }
    }

    /// Reports applied so far, each with the cycle it was applied at.
    pub fn applied(&self) -> &[(u64, SkillReport)] {
        &self.log
    }

    /// Blocks until the running check, if any, has finished. Its notes are
    /// applied at the next cycle.
    pub fn wait_idle(&mut self) -> Option<SkillReport> {
        if !self.in_flight {
            return None;
        }
        let r = self.results.recv().ok();
        self.in_flight = false;
        r.inspect(|r| self.pending.push(r.clone()))
    }
}

impl crate::reasoner::CycleHook for SkillWorker {
    fn before_selection(&mut self, _spec: &AgentSpec, cycle: u64, state: &ClosedState) -> Vec<(BeliefId, bool)> {
        if self.in_flight {
            match self.results.try_recv() {
                Ok(r) => {
                    self.in_flight = false;
                    self.pending.push(r);
                }
                Err(TryRecvError::Empty) => {}
                Err(TryRecvError::Disconnected) => self.in_flight = false,
            }
        }
        let mut out = Vec::new();
        for r in self.pending.drain(..) {
            debug!("skill report from cycle {} applied at cycle {cycle}", r.cycle);
            out.extend(r.changes.iter().copied());
            self.log.push((cycle, r));
        }
        if !self.in_flight && !self.skill.queries.is_empty() && self.skill.due(cycle) {
            if let Some(tx) = &self.jobs {
                self.in_flight = tx
                    .send(Job {
                        cycle,
                        state: state.clone(),
                    })
                    .is_ok();
            }
        }
        out
    }
}

impl Drop for SkillWorker {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Objective used to rank the plans applicable to an event.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    pub objective: Query,
    pub direction: Direction,
    pub future: Future,
}

/// Outcome of [`verified_select`] for one event.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub plan: PlanId,
    /// Score per candidate in candidate order; empty on the singleton path.
    pub scores: Vec<(PlanId, f64)>,
}

/// Scores each candidate by the objective from `state` with the first
/// choice restricted to selections containing the candidate, and returns the
/// best one. Ties go to the lowest plan id. A single candidate is returned
/// without checking.
pub fn verified_select(
    model: &ProbModel,
    state: usize,
    candidates: &[PlanId],
    cfg: &SelectorConfig,
    opts: &CheckOptions,
) -> Result<Verdict, RuntimeError> {
    match candidates {
        [] => return Err(RuntimeError::NotQuantitative("no candidates".into())),
        [only] => {
            return Ok(Verdict {
                plan: *only,
                scores: Vec::new(),
            })
        }
        _ => {}
    }
    if cfg.objective.quantity().is_none() {
        return Err(RuntimeError::NotQuantitative(cfg.objective.to_string()));
    }
    if state >= model.num_states() {
        return Err(RuntimeError::UnknownState);
    }
    let query = resolve_quantity(&cfg.objective, model.kind, cfg.future);
    let mut scores = Vec::with_capacity(candidates.len());
    for &plan in candidates {
        let label = plan.index() as u16;
        let has = |c: usize| model.choice_plans(c).contains(&label);
        if !model.choices(state).any(has) {
            return Err(RuntimeError::NoChoice { state, plan });
        }
        let restricted = model.restrict(state, has);
        let r = check_from(&restricted, &query, state, opts)?;
        scores.push((plan, r.value));
    }
    let better = |a: f64, b: f64| match cfg.direction {
        Direction::Maximize => a > b,
        Direction::Minimize => a < b,
    };
    let mut best = scores[0];
    for &(p, v) in &scores[1..] {
        if better(v, best.1) || (v == best.1 && p < best.0) {
            best = (p, v);
        }
    }
    Ok(Verdict { plan: best.0, scores })
}

/// Plan selection function backed by [`verified_select`].
///
/// Events without a matching selector declaration, and any failure, fall
/// back to the first-declared plan.
pub struct VerifiedSelector {
    view: Arc<ModelView>,
    configs: Vec<(Option<Event>, SelectorConfig)>,
    opts: CheckOptions,
    /// Number of model checks run, for diagnostics.
    pub checks: usize,
    pub fallbacks: usize,
    cache: HashMap<(usize, Vec<PlanId>), PlanId>,
}

impl VerifiedSelector {
    pub fn new(view: Arc<ModelView>, configs: Vec<(Option<Event>, SelectorConfig)>, opts: CheckOptions) -> Self {
        VerifiedSelector {
            view,
            configs,
            opts,
            checks: 0,
            fallbacks: 0,
            cache: HashMap::new(),
        }
    }

    /// Uses the spec's `select` declarations.
    pub fn from_spec(spec: &AgentSpec, view: Arc<ModelView>, future: Future, opts: CheckOptions) -> Self {
        let configs = spec
            .runtime
            .selectors
            .iter()
            .map(|s| {
                (
                    s.event,
                    SelectorConfig {
                        objective: s.objective.clone(),
                        direction: s.direction,
                        future,
                    },
                )
            })
            .collect();
        Self::new(view, configs, opts)
    }

    fn config_for(&self, e: Event) -> Option<&SelectorConfig> {
        self.configs
            .iter()
            .find(|(ev, _)| *ev == Some(e))
            .or_else(|| self.configs.iter().find(|(ev, _)| ev.is_none()))
            .map(|(_, c)| c)
    }

    fn pick(&mut self, state: Option<usize>, event: Event, plans: &[PlanId]) -> PlanId {
        if plans.len() == 1 {
            return plans[0];
        }
        let Some(cfg) = self.config_for(event).cloned() else {
            return plans[0];
        };
        let Some(state) = state else {
            warn!("verified selection fell back to first-declared: live state is not in the model");
            self.fallbacks += 1;
            return plans[0];
        };
        if let Some(p) = self.cache.get(&(state, plans.to_vec())) {
            return *p;
        }
        self.checks += 1;
        match verified_select(&self.view.model, state, plans, &cfg, &self.opts) {
            Ok(v) => {
                debug!("verified selection at state {state}: {:?}", v.scores);
                self.cache.insert((state, plans.to_vec()), v.plan);
                v.plan
            }
            Err(e) => {
                warn!("verified selection fell back to first-declared: {e}");
                self.fallbacks += 1;
                plans[0]
            }
        }
    }
}

impl PlanSelector for VerifiedSelector {
    fn name(&self) -> &str {
        "verified"
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> usize {
        let state = self.view.lookup(ctx.state);
        let mut picks: Vec<PlanId> = ctx
            .applicable
            .iter()
            .map(|(e, plans)| self.pick(state, *e, plans))
            .collect();
        picks.sort();
        picks.dedup();
        ctx.choices.iter().position(|c| *c == picks).unwrap_or(0)
    }
}
