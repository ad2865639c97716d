#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use lisa::abstraction::{ModelKind, ProbModel};
use lisa::agent_model::AgentSpec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn read_data(name: &str) -> String {
    std::fs::read_to_string(data_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn parse_text(text: &str) -> AgentSpec {
    match lisa::dsl::parse(text) {
        Ok(p) => p.spec,
        Err(e) => panic!("{e}\n{text}"),
    }
}

pub fn load(name: &str) -> AgentSpec {
    parse_text(&read_data(name))
}

/// Random agent program with at most 6 plans and 8 beliefs. The last plan
/// always adds `Mission complete`.
///
/// With `clash` the first two plans share a triggering event on an ambient
/// percept and both have a `true` context, so plan selection is
/// nondeterministic in some reachable state. Without it all triggering
/// events are pairwise distinct.
pub fn random_program(seed: u64, clash: bool) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_percepts = rng.gen_range(1..=2);
    let n_actions = rng.gen_range(1..=2);
    let n_notes = rng.gen_range(1..=(7 - n_percepts - n_actions).min(2));
    let probs = [0.3, 0.5, 0.7, 0.9, 1.0];

    let percepts: Vec<String> = (1..=n_percepts).map(|i| format!("Sensor {i}")).collect();
    let feedback: Vec<String> = (1..=n_actions).map(|i| format!("Done {i}")).collect();
    let mut notes: Vec<String> = vec!["Mission complete".to_string()];
    notes.extend((2..=n_notes).map(|i| format!("Note {i}")));

    let mut text = String::from("PERCEPTION PROCESS\n");
    for p in &percepts {
        let mu = rng.gen_range(1..=2);
        let sigma = 0;
        let pr = probs[rng.gen_range(0..4)];
        text += &format!("{p}. {{[],[{pr},{mu},{sigma}]}}\n");
    }
    text += "ACTIONS\n";
    for (i, fb) in feedback.iter().enumerate() {
        let pr = probs[rng.gen_range(1..5)];
        let mu = 1;
        text += &format!("Act {}. ^[{fb}][{pr},{mu},0]\n", i + 1);
    }
    if rng.gen_bool(0.5) {
        let a = percepts.choose(&mut rng).unwrap();
        let b = feedback.choose(&mut rng).unwrap();
        let n = notes.choose(&mut rng).unwrap();
        text += &format!("LOGIC RULES\nIf ^[{a}] and ^[{b}] then +^[{n}].\n");
    }

    let mut events: Vec<(String, bool)> = Vec::new();
    for b in percepts.iter().chain(&feedback).chain(&notes) {
        events.push((b.clone(), true));
        events.push((b.clone(), false));
    }
    let first = (percepts[0].clone(), true);
    events.retain(|e| *e != first);
    events.shuffle(&mut rng);
    let n_plans = rng.gen_range(2..=6);
    let max_steps = if n_plans > 4 { 1 } else { 2 };
    let all: Vec<&String> = percepts.iter().chain(&feedback).chain(&notes).collect();

    text += "EXECUTABLE PLANS\n";
    for i in 0..n_plans {
        let (trigger, context) = if i == 0 || (clash && i == 1) {
            (first.clone(), "true".to_string())
        } else {
            let t = events.pop().unwrap();
            let ctx = match rng.gen_range(0..3) {
                0 => "true".to_string(),
                1 => format!("^[{}]", all.choose(&mut rng).unwrap()),
                _ => format!(
                    "~^[{}] and ^[{}]",
                    all.choose(&mut rng).unwrap(),
                    all.choose(&mut rng).unwrap()
                ),
            };
            (t, ctx)
        };
        let sign = if trigger.1 { "^" } else { "~^" };
        let mut steps = Vec::new();
        if i + 1 == n_plans {
            // Keeps the goal belief in the program so queries can name it.
            steps.push("+^[Mission complete]".to_string());
        }
        for _ in 0..rng.gen_range(1..=max_steps) {
            if rng.gen_bool(0.5) {
                steps.push(format!("[Act {}.]", rng.gen_range(1..=n_actions)));
            } else {
                let add = if rng.gen_bool(0.7) { '+' } else { '-' };
                steps.push(format!("{add}^[{}]", notes.choose(&mut rng).unwrap()));
            }
        }
        text += &format!("If {sign}[{}] while {context} then\n{}.\n", trigger.0, steps.join(", "));
    }
    text
}

/// Random model with `n` states and out-degree 1..=`max_deg`. In an MDP each
/// state has, with probability `multi`, 2..=`max_choices` choices and one
/// otherwise. Variable `s` is the state index and `goal` holds on a random
/// subset.
pub fn random_model(seed: u64, kind: ModelKind, n: usize, max_deg: usize, max_choices: usize, multi: f64) -> ProbModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goal: Vec<i32> = (0..n).map(|_| i32::from(rng.gen_bool(0.15))).collect();
    let choices = (0..n)
        .map(|_| {
            let k = if kind == ModelKind::Mdp && rng.gen_bool(multi) {
                rng.gen_range(2..=max_choices)
            } else {
                1
            };
            (0..k)
                .map(|_| {
                    let deg = rng.gen_range(1..=max_deg);
                    let mut dst: Vec<u32> = (0..deg).map(|_| rng.gen_range(0..n as u32)).collect();
                    dst.sort();
                    dst.dedup();
                    let w: Vec<f64> = dst.iter().map(|_| rng.gen_range(1..=8) as f64).collect();
                    let total: f64 = w.iter().sum();
                    dst.into_iter().zip(w).map(|(d, w)| (d, w / total)).collect()
                })
                .collect()
        })
        .collect();
    ProbModel::from_choices(
        kind,
        vec!["s".into(), "goal".into()],
        (0..n).map(|i| vec![i as i32, goal[i]]).collect(),
        0,
        choices,
    )
}

pub fn goal_states(model: &ProbModel) -> Vec<bool> {
    let g = model.var_index("goal").expect("goal variable");
    (0..model.num_states()).map(|s| model.valuation(s)[g] == 1).collect()
}

/// Probability of reaching `goal` within `k` steps from `s` in a DTMC, by
/// enumerating every path.
pub fn path_enumeration(model: &ProbModel, goal: &[bool], s: usize, k: u32) -> f64 {
    if goal[s] {
        return 1.0;
    }
    if k == 0 {
        return 0.0;
    }
    let c = model.choices(s).start;
    model
        .transitions(c)
        .map(|(d, p)| p * path_enumeration(model, goal, d, k - 1))
        .sum()
}

/// Optimal probability of reaching `goal` within `k` steps from `s` in an
/// MDP, by expanding the full tree of histories and picking the best choice
/// at every node.
pub fn history_enumeration(model: &ProbModel, goal: &[bool], s: usize, k: u32, max: bool) -> f64 {
    if goal[s] {
        return 1.0;
    }
    if k == 0 {
        return 0.0;
    }
    let values = model.choices(s).map(|c| {
        model
            .transitions(c)
            .map(|(d, p)| p * history_enumeration(model, goal, d, k - 1, max))
            .sum::<f64>()
    });
    if max {
        values.fold(f64::NEG_INFINITY, f64::max)
    } else {
        values.fold(f64::INFINITY, f64::min)
    }
}

/// Expected reward accumulated over the first `k` steps from `s` in a DTMC,
/// by enumerating every path.
pub fn reward_enumeration(model: &ProbModel, s: usize, k: u32) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let c = model.choices(s).start;
    model.state_reward(s)
        + model.choice_reward(c)
        + model
            .transitions(c)
            .map(|(d, p)| p * reward_enumeration(model, d, k - 1))
            .sum::<f64>()
}

/// Unbounded reachability in the DTMC induced by `policy` (one choice index
/// per state), by a direct linear solve over the states that can reach the
/// goal.
pub fn solve_reachability(model: &ProbModel, policy: &[usize], goal: &[bool]) -> Vec<f64> {
    let n = model.num_states();
    // States with a path to the goal under the policy.
    let mut can = goal.to_vec();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !can[s] && model.transitions(policy[s]).any(|(d, p)| p > 0.0 && can[d]) {
                can[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let unknown: Vec<usize> = (0..n).filter(|&s| can[s] && !goal[s]).collect();
    let pos = |s: usize| unknown.iter().position(|&u| u == s);
    let m = unknown.len();
    if m == 0 {
        return goal.iter().map(|&g| f64::from(u8::from(g))).collect();
    }
    let mut a = nalgebra::DMatrix::<f64>::identity(m, m);
    let mut b = nalgebra::DVector::<f64>::zeros(m);
    for (i, &s) in unknown.iter().enumerate() {
        for (d, p) in model.transitions(policy[s]) {
            if goal[d] {
                b[i] += p;
            } else if let Some(j) = pos(d) {
                a[(i, j)] -= p;
            }
        }
    }
    let x = a.lu().solve(&b).expect("nonsingular system");
    (0..n)
        .map(|s| {
            if goal[s] {
                1.0
            } else {
                pos(s).map_or(0.0, |i| x[i])
            }
        })
        .collect()
}

/// Min and max unbounded reachability from the initial state over all
/// memoryless deterministic policies.
pub fn policy_enumeration(model: &ProbModel, goal: &[bool]) -> (f64, f64) {
    let n = model.num_states();
    let sizes: Vec<usize> = (0..n).map(|s| model.choices(s).len()).collect();
    let mut pick = vec![0usize; n];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    loop {
        let policy: Vec<usize> = (0..n).map(|s| model.choices(s).start + pick[s]).collect();
        let v = solve_reachability(model, &policy, goal)[model.initial as usize];
        lo = lo.min(v);
        hi = hi.max(v);
        let mut i = 0;
        while i < n {
            pick[i] += 1;
            if pick[i] < sizes[i] {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    (lo, hi)
}

pub fn policy_count(model: &ProbModel) -> u128 {
    (0..model.num_states()).map(|s| model.choices(s).len() as u128).product()
}

/// Distinct states reachable from the initial state.
pub fn reachable(model: &ProbModel) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([model.initial as usize]);
    let mut stack = vec![model.initial as usize];
    while let Some(s) = stack.pop() {
        for c in model.choices(s) {
            for (d, _) in model.transitions(c) {
                if seen.insert(d) {
                    stack.push(d);
                }
            }
        }
    }
    seen
}

/// Runs `cycles` cycles of `engine` and follows them through `model`. Every
/// cycle must match a choice of the current state whose plans are the
/// selected ones and which reaches the next state with positive probability.
/// Returns the probability of the matched path.
pub fn follow_trace(
    engine: &mut lisa::reasoner::Engine<'_>,
    model: &ProbModel,
    index: &lisa::abstraction::StateIndex,
    cycles: u64,
) -> Result<f64, String> {
    let mut s = index.get(engine.state()).ok_or("initial state not in the model")?;
    if s != model.initial as usize {
        return Err(format!("initial state maps to {s}, model starts at {}", model.initial));
    }
    let mut prob = 1.0;
    for _ in 0..cycles {
        let trace = engine.step().map_err(|e| e.to_string())?;
        let t = index
            .get(engine.state())
            .ok_or_else(|| format!("cycle {}: successor not in the model", trace.cycle))?;
        let selected: Vec<u16> = trace.selected.iter().map(|n| (*n - 1) as u16).collect();
        let p = model
            .choices(s)
            .filter(|&c| model.choice_plans(c) == selected.as_slice())
            .flat_map(|c| model.transitions(c))
            .filter(|&(d, _)| d == t)
            .map(|(_, p)| p)
            .fold(0.0, f64::max);
        if p <= 0.0 {
            return Err(format!("cycle {}: no transition {s} -> {t} for plans {selected:?}", trace.cycle));
        }
        prob *= p;
        s = t;
    }
    Ok(prob)
}
