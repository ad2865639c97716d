//! Discrete probabilistic semantics of percept and action-feedback
//! annotations `(p, μ, σ)`.
//!
//! Every annotation is a [`DelayedBernoulli`]: an outcome that happens with
//! probability `p` after a delay drawn uniformly from `[μ−σ, μ+σ]` reasoning
//! cycles. Delays are tracked by one bounded counter per modeled atom
//! ([`CounterBank`]), which keeps the closed loop Markovian. The same branch
//! lists drive exhaustive expansion (abstraction) and sampling (reasoner).

use rand::Rng;

use crate::agent_model::{ActionId, AgentSpec, BeliefId, Valuation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedBernoulli {
    pub p: f64,
    pub mu: u32,
    pub sigma: u32,
}

impl DelayedBernoulli {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p) || self.p.is_nan() {
            return Err(format!("probability {} outside [0,1]", self.p));
        }
        if self.mu < 1 {
            return Err("mean delay must be at least 1".into());
        }
        if self.sigma >= self.mu {
            return Err(format!("sigma {} must be below mu {}", self.sigma, self.mu));
        }
        if self.mu + self.sigma > 255 {
            return Err("delay exceeds 255 cycles".into());
        }
        Ok(())
    }

    pub fn max_delay(&self) -> u8 {
        (self.mu + self.sigma) as u8
    }

    /// Delay support with the probability of each delay.
    pub fn delays(&self) -> impl Iterator<Item = (u8, f64)> {
        let width = 2 * self.sigma + 1;
        let w = 1.0 / width as f64;
        (self.mu - self.sigma..=self.mu + self.sigma).map(move |d| (d as u8, w))
    }
}

/// Outcome model of one external action. The probability mass not assigned
/// to any feedback is the "no feedback" outcome.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeedbackOutcome {
    pub outcomes: Vec<(BeliefId, DelayedBernoulli)>,
}

impl FeedbackOutcome {
    pub fn none_prob(&self) -> f64 {
        (1.0 - self.outcomes.iter().map(|(_, d)| d.p).sum::<f64>()).max(0.0)
    }
}

/// Percept process. An empty condition list makes the process ambient.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptDynamics {
    pub atom: BeliefId,
    pub condition: Vec<BeliefId>,
    pub activation: DelayedBernoulli,
    pub deactivation: DelayedBernoulli,
    /// Whether the deactivation triple was written out in the source.
    pub explicit_deactivation: bool,
}

impl PerceptDynamics {
    pub fn is_ambient(&self) -> bool {
        self.condition.is_empty()
    }

    pub fn max_counter(&self) -> u8 {
        self.activation.max_delay().max(self.deactivation.max_delay())
    }

    fn condition_holds(&self, beliefs: Valuation) -> bool {
        self.condition.iter().all(|b| beliefs.get(*b))
    }

    /// Whether the condition became satisfied in the last belief review.
    pub fn condition_rose(&self, beliefs: Valuation, events: Valuation) -> bool {
        !self.is_ambient()
            && self.condition_holds(beliefs)
            && !self.condition_holds(beliefs.xor(events))
    }
}

/// One counter per percept process followed by one counter per feedback
/// atom. A counter at 0 is idle; an armed counter decrements once per cycle
/// and fires when it reaches 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CounterBank(pub Vec<u8>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackSlot {
    pub action: ActionId,
    pub atom: BeliefId,
}

/// Assignment of counters to modeled atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterLayout {
    pub percepts: usize,
    pub feedback: Vec<FeedbackSlot>,
    /// First feedback counter of every action, plus a final sentinel.
    pub action_start: Vec<usize>,
    pub max: Vec<u8>,
    pub atoms: Vec<BeliefId>,
}

impl CounterLayout {
    pub fn new(spec: &AgentSpec) -> Self {
        let mut max = Vec::new();
        let mut atoms = Vec::new();
        for p in &spec.percepts {
            max.push(p.max_counter());
            atoms.push(p.atom);
        }
        let mut feedback = Vec::new();
        let mut action_start = Vec::new();
        for (i, a) in spec.actions.iter().enumerate() {
            action_start.push(spec.percepts.len() + feedback.len());
            for (atom, db) in &a.feedback.outcomes {
                feedback.push(FeedbackSlot {
                    action: ActionId(i as u16),
                    atom: *atom,
                });
                max.push(db.max_delay());
                atoms.push(*atom);
            }
        }
        action_start.push(spec.percepts.len() + feedback.len());
        CounterLayout {
            percepts: spec.percepts.len(),
            feedback,
            action_start,
            max,
            atoms,
        }
    }

    pub fn len(&self) -> usize {
        self.max.len()
    }

    pub fn is_empty(&self) -> bool {
        self.max.is_empty()
    }

    pub fn idle(&self) -> CounterBank {
        CounterBank(vec![0; self.len()])
    }

    pub fn action_counters(&self, action: ActionId) -> std::ops::Range<usize> {
        self.action_start[action.index()]..self.action_start[action.index() + 1]
    }
}

/// Result of arming an action's feedback: which outcome was drawn and its
/// delay. `outcome == None` is the "no feedback" branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arming {
    pub action: ActionId,
    pub outcome: Option<u8>,
    pub delay: u8,
}

/// Categorical draw over outcomes, then a uniform delay for the chosen one.
/// Zero-probability branches are omitted; the "no feedback" branch comes last.
pub fn arm_feedback(action: ActionId, feedback: &FeedbackOutcome) -> Vec<(Arming, f64)> {
    let mut out = Vec::new();
    for (i, (_, db)) in feedback.outcomes.iter().enumerate() {
        if db.p <= 0.0 {
            continue;
        }
        for (d, w) in db.delays() {
            out.push((
                Arming {
                    action,
                    outcome: Some(i as u8),
                    delay: d,
                },
                db.p * w,
            ));
        }
    }
    let none = feedback.none_prob();
    if none > 0.0 {
        out.push((
            Arming {
                action,
                outcome: None,
                delay: 0,
            },
            none,
        ));
    }
    out
}

/// Local state of a percept process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PerceptLocal {
    pub active: bool,
    pub counter: u8,
}

/// One cycle of a percept process.
///
/// Ambient processes sample on a renewal cadence: whenever the counter runs
/// out the atom flips with the probability of the process matching its
/// current value (activation when false, deactivation when true), and the
/// counter re-arms. An idle ambient counter arms on the first tick, counting
/// that tick. A process whose flip probability is 0 stays idle.
///
/// Conditional processes arm activation (with probability `p`) on the tick
/// after their condition becomes satisfied, counting that tick, so a `(1,1,0)`
/// percept holds exactly one cycle after its condition. When activation fires
/// the deactivation process arms with its own probability.
pub fn percept_tick(p: &PerceptDynamics, local: PerceptLocal, rising: bool) -> Vec<(PerceptLocal, f64)> {
    let process = |active: bool| {
        if active {
            &p.deactivation
        } else {
            &p.activation
        }
    };
    let mut out: Vec<(PerceptLocal, f64)> = Vec::new();
    let mut push = |l: PerceptLocal, w: f64| {
        if w <= 0.0 {
            return;
        }
        if let Some(slot) = out.iter_mut().find(|(o, _)| *o == l) {
            slot.1 += w;
        } else {
            out.push((l, w));
        }
    };

    if p.is_ambient() {
        // Renewal boundary: flip with the current process probability, then
        // re-arm with the delay of the process now in charge.
        let boundary = |active: bool, weight: f64, push: &mut dyn FnMut(PerceptLocal, f64)| {
            let q = process(active).p;
            for (next, w_flip) in [(!active, q), (active, 1.0 - q)] {
                if w_flip <= 0.0 {
                    continue;
                }
                let proc_next = process(next);
                if proc_next.p <= 0.0 {
                    push(PerceptLocal { active: next, counter: 0 }, weight * w_flip);
                } else {
                    for (d, w) in proc_next.delays() {
                        push(PerceptLocal { active: next, counter: d }, weight * w_flip * w);
                    }
                }
            }
        };
        match local.counter {
            0 => {
                let proc_now = process(local.active);
                if proc_now.p <= 0.0 {
                    push(local, 1.0);
                } else {
                    for (d, w) in proc_now.delays() {
                        if d == 1 {
                            boundary(local.active, w, &mut push);
                        } else {
                            push(PerceptLocal { active: local.active, counter: d - 1 }, w);
                        }
                    }
                }
            }
            1 => boundary(local.active, 1.0, &mut push),
            c => push(PerceptLocal { active: local.active, counter: c - 1 }, 1.0),
        }
        return out;
    }

    // Conditional process.
    let activate = |weight: f64, push: &mut dyn FnMut(PerceptLocal, f64)| {
        let deact = &p.deactivation;
        if deact.p < 1.0 {
            push(PerceptLocal { active: true, counter: 0 }, weight * (1.0 - deact.p));
        }
        if deact.p > 0.0 {
            for (d, w) in deact.delays() {
                push(PerceptLocal { active: true, counter: d }, weight * deact.p * w);
            }
        }
    };
    match local.counter {
        0 => {
            if !local.active && rising && p.activation.p > 0.0 {
                let act = &p.activation;
                if act.p < 1.0 {
                    push(local, 1.0 - act.p);
                }
                for (d, w) in act.delays() {
                    if d == 1 {
                        activate(act.p * w, &mut push);
                    } else {
                        push(PerceptLocal { active: false, counter: d - 1 }, act.p * w);
                    }
                }
            } else {
                push(local, 1.0);
            }
        }
        1 => {
            if local.active {
                push(PerceptLocal { active: false, counter: 0 }, 1.0);
            } else {
                activate(1.0, &mut push);
            }
        }
        c => push(PerceptLocal { active: local.active, counter: c - 1 }, 1.0),
    }
    out
}

/// One probabilistic component of a cycle's environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    Arm(Arming),
    Percept { index: usize, local: PerceptLocal },
}

/// Independent components of one environment step; the joint distribution is
/// their product.
#[derive(Debug, Clone, Default)]
pub struct BranchSet {
    pub components: Vec<Vec<(Branch, f64)>>,
}

impl BranchSet {
    /// Number of joint branches.
    pub fn size(&self) -> usize {
        self.components.iter().map(Vec::len).product()
    }

    /// Enumerates joint branches in lexicographic (mixed-radix) order,
    /// calling `f` with the picked branches and their joint probability.
    pub fn for_each(&self, mut f: impl FnMut(&[Branch], f64)) {
        let n = self.components.len();
        let mut idx = vec![0usize; n];
        let mut picked: Vec<Branch> = self.components.iter().map(|c| c[0].0).collect();
        if self.components.iter().any(Vec::is_empty) {
            return;
        }
        loop {
            let mut prob = 1.0;
            for (k, comp) in self.components.iter().enumerate() {
                picked[k] = comp[idx[k]].0;
                prob *= comp[idx[k]].1;
            }
            f(&picked, prob);
            let mut k = n;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.components[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Draws one branch per component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Branch> {
        self.components.iter().map(|c| sample_branch(c, rng)).collect()
    }
}

pub fn sample_branch<T: Copy, R: Rng + ?Sized>(dist: &[(T, f64)], rng: &mut R) -> T {
    let total: f64 = dist.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (item, w) in dist {
        if u < *w {
            return *item;
        }
        u -= w;
    }
    dist.last().expect("empty distribution").0
}

/// Environment branches for one cycle: arming of the actions invoked by
/// `f_act` and the tick of every percept process.
///
/// `beliefs` and `events` are the state the cycle starts from. Counter values
/// come from `counters`.
pub fn tick(
    spec: &AgentSpec,
    counters: &CounterBank,
    beliefs: Valuation,
    events: Valuation,
    invoked: &[ActionId],
) -> BranchSet {
    let mut components = Vec::with_capacity(invoked.len() + spec.percepts.len());
    for &a in invoked {
        components.push(
            arm_feedback(a, &spec.actions[a.index()].feedback)
                .into_iter()
                .map(|(arm, w)| (Branch::Arm(arm), w))
                .collect(),
        );
    }
    for (i, p) in spec.percepts.iter().enumerate() {
        let local = PerceptLocal {
            active: beliefs.get(p.atom),
            counter: counters.0[i],
        };
        let rising = p.condition_rose(beliefs, events);
        components.push(
            percept_tick(p, local, rising)
                .into_iter()
                .map(|(l, w)| (Branch::Percept { index: i, local: l }, w))
                .collect(),
        );
    }
    BranchSet { components }
}

/// Applies one joint branch plus the deterministic feedback countdown.
///
/// Feedback atoms are one-cycle pulses: an atom raised by an expiring counter
/// is cleared again on the next tick.
pub fn apply_branches(
    spec: &AgentSpec,
    layout: &CounterLayout,
    counters: &mut CounterBank,
    beliefs: &mut Valuation,
    branches: &[Branch],
) {
    for b in branches {
        if let Branch::Arm(arm) = b {
            let range = layout.action_counters(arm.action);
            for c in &mut counters.0[range.clone()] {
                *c = 0;
            }
            if let Some(o) = arm.outcome {
                counters.0[range.start + o as usize] = arm.delay;
            }
        }
    }
    for slot in &layout.feedback {
        beliefs.set(slot.atom, false);
    }
    for (k, slot) in layout.feedback.iter().enumerate() {
        let c = &mut counters.0[layout.percepts + k];
        if *c > 0 {
            *c -= 1;
            if *c == 0 {
                beliefs.set(slot.atom, true);
            }
        }
    }
    for b in branches {
        if let Branch::Percept { index, local } = b {
            counters.0[*index] = local.counter;
            beliefs.set(spec.percepts[*index].atom, local.active);
        }
    }
}
