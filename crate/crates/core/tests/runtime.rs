mod common;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use lisa::abstraction::{build, BuildOptions, ModelKind, ProbModel};
use lisa::agent_model::{AgentSpec, BeliefId, Direction, PlanId};
use lisa::pctl::{parse_query, CheckOptions};
use lisa::reasoner::{applicable_plans, ClosedState, CycleHook, Engine, FirstDeclared};
use lisa::runtime::{
    resolve_quantity, skill_step, Future, ModelView, RuntimeError, SelectorConfig, SkillRunner, SkillWorker,
    VerificationSkill, VerifiedSelector, verified_select,
};

fn tight() -> CheckOptions {
    CheckOptions {
        epsilon: 1e-12,
        ..CheckOptions::default()
    }
}

fn maximize(q: &str, future: Future) -> SelectorConfig {
    SelectorConfig {
        objective: parse_query(q).unwrap(),
        direction: Direction::Maximize,
        future,
    }
}

/// State 0 offers plan 0 and plan 1; state 1 is success, state 2 failure.
fn two_routes(p0: f64, p1: f64) -> ProbModel {
    ProbModel::from_labelled_choices(
        ModelKind::Mdp,
        vec!["ok".into()],
        vec![vec![0], vec![1], vec![0]],
        0,
        vec![
            vec![
                (vec![0], vec![(1, p0), (2, 1.0 - p0)]),
                (vec![1], vec![(1, p1), (2, 1.0 - p1)]),
            ],
            vec![(vec![], vec![(1, 1.0)])],
            vec![(vec![], vec![(2, 1.0)])],
        ],
    )
}

const P: [PlanId; 2] = [PlanId(0), PlanId(1)];

#[test]
fn picks_the_better_plan() {
    let m = two_routes(0.4, 0.9);
    let v = verified_select(&m, 0, &P, &maximize("P=? [ F ok=1 ]", Future::Optimistic), &tight()).unwrap();
    assert_eq!(v.plan, PlanId(1));
    assert!((v.scores[0].1 - 0.4).abs() < 1e-12 && (v.scores[1].1 - 0.9).abs() < 1e-12);

    let m = two_routes(0.9, 0.4);
    let v = verified_select(&m, 0, &P, &maximize("P=? [ F ok=1 ]", Future::Optimistic), &tight()).unwrap();
    assert_eq!(v.plan, PlanId(0));

    let min = SelectorConfig {
        direction: Direction::Minimize,
        ..maximize("P=? [ F ok=1 ]", Future::Optimistic)
    };
    assert_eq!(verified_select(&m, 0, &P, &min, &tight()).unwrap().plan, PlanId(1));
}

#[test]
fn ties_go_to_the_lower_plan() {
    let m = two_routes(0.7, 0.7);
    let cfg = maximize("P=? [ F ok=1 ]", Future::Optimistic);
    assert_eq!(verified_select(&m, 0, &P, &cfg, &tight()).unwrap().plan, PlanId(0));
    let reversed = [PlanId(1), PlanId(0)];
    assert_eq!(verified_select(&m, 0, &reversed, &cfg, &tight()).unwrap().plan, PlanId(0));
}

#[test]
fn single_candidates_skip_checking() {
    let m = two_routes(0.4, 0.9);
    // The objective is not even valid for this model.
    let cfg = maximize("P=? [ F nowhere=1 ]", Future::Optimistic);
    let v = verified_select(&m, 99, &[PlanId(1)], &cfg, &tight()).unwrap();
    assert_eq!(v.plan, PlanId(1));
    assert!(v.scores.is_empty());
}

#[test]
fn failures_are_reported() {
    let m = two_routes(0.4, 0.9);
    let cfg = maximize("P=? [ F ok=1 ]", Future::Optimistic);
    assert_eq!(verified_select(&m, 7, &P, &cfg, &tight()), Err(RuntimeError::UnknownState));
    assert!(matches!(
        verified_select(&m, 0, &[PlanId(0), PlanId(5)], &cfg, &tight()),
        Err(RuntimeError::NoChoice { plan: PlanId(5), .. })
    ));
    assert!(matches!(
        verified_select(&m, 0, &P, &maximize("P=? [ F nowhere=1 ]", Future::Optimistic), &tight()),
        Err(RuntimeError::Check(_))
    ));
    let qualitative = maximize("P>=0.5 [ F ok=1 ]", Future::Optimistic);
    assert!(matches!(
        verified_select(&m, 0, &P, &qualitative, &tight()),
        Err(RuntimeError::NotQuantitative(_))
    ));
}

#[test]
fn future_choices_follow_the_configured_attitude() {
    // Plan 0 leads to a state where the goal is reached or missed by a
    // later choice; plan 1 succeeds with 0.6.
    let m = ProbModel::from_labelled_choices(
        ModelKind::Mdp,
        vec!["ok".into()],
        vec![vec![0], vec![1], vec![0], vec![0]],
        0,
        vec![
            vec![(vec![0], vec![(3, 1.0)]), (vec![1], vec![(1, 0.6), (2, 0.4)])],
            vec![(vec![], vec![(1, 1.0)])],
            vec![(vec![], vec![(2, 1.0)])],
            vec![(vec![], vec![(1, 1.0)]), (vec![], vec![(2, 1.0)])],
        ],
    );
    let q = "P=? [ F ok=1 ]";
    let opt = verified_select(&m, 0, &P, &maximize(q, Future::Optimistic), &tight()).unwrap();
    let pes = verified_select(&m, 0, &P, &maximize(q, Future::Pessimistic), &tight()).unwrap();
    assert_eq!(opt.plan, PlanId(0));
    assert_eq!(pes.plan, PlanId(1));
    assert_eq!(
        resolve_quantity(&parse_query(q).unwrap(), ModelKind::Mdp, Future::Pessimistic).to_string(),
        "Pmin=? [ F ok=1 ]"
    );
    assert_eq!(
        resolve_quantity(&parse_query(q).unwrap(), ModelKind::Dtmc, Future::Pessimistic).to_string(),
        q
    );
}

fn fixture_view(spec: &AgentSpec) -> Arc<ModelView> {
    let a = build(spec, &BuildOptions { keep_index: true, ..BuildOptions::default() }).unwrap();
    assert_eq!(a.model.kind, ModelKind::Mdp);
    Arc::new(ModelView::new(spec, a.model, a.index.unwrap()))
}

/// Runs until both plans are applicable and returns that state.
fn clash_state(spec: &AgentSpec) -> ClosedState {
    let mut e = Engine::new(spec, 0, Box::new(FirstDeclared)).unwrap();
    for _ in 0..20 {
        if applicable_plans(spec, &e.state().agent).iter().any(|(_, ps)| ps.len() == 2) {
            return e.state().clone();
        }
        e.step().unwrap();
    }
    panic!("plans never clashed");
}

#[test]
fn bundled_fixture_prefers_the_reliable_route() {
    let spec = common::load("selector_mdp.lisa");
    let view = fixture_view(&spec);
    let s = view.lookup(&clash_state(&spec)).unwrap();
    let cfg = maximize("P=? [ F arrived=1 ]", Future::Optimistic);
    let v = verified_select(&view.model, s, &P, &cfg, &tight()).unwrap();
    // A route step completes only on its feedback, which arrives with the
    // declared probability; the following note step then always succeeds.
    assert!((v.scores[0].1 - 0.4).abs() < 1e-9, "{:?}", v.scores);
    assert!((v.scores[1].1 - 0.9).abs() < 1e-9, "{:?}", v.scores);
    assert_eq!(v.plan, PlanId(1));
}

#[test]
fn verified_selector_drives_the_engine() {
    let spec = common::load("selector_mdp.lisa");
    let view = fixture_view(&spec);
    let runs = 4000;
    let mut arrived = [0usize; 2];
    for seed in 0..runs {
        for (i, verified) in [false, true].into_iter().enumerate() {
            let selector: Box<dyn lisa::reasoner::PlanSelector> = if verified {
                Box::new(VerifiedSelector::from_spec(&spec, view.clone(), Future::Optimistic, tight()))
            } else {
                Box::new(FirstDeclared)
            };
            let mut e = Engine::new(&spec, seed, selector).unwrap();
            let traces = e.run(10).unwrap();
            let chosen: Vec<&Vec<usize>> = traces.iter().map(|t| &t.selected).filter(|s| !s.is_empty()).collect();
            assert_eq!(chosen, vec![&vec![if verified { 2 } else { 1 }]]);
            if traces.last().unwrap().beliefs.iter().any(|b| b == "arrived") {
                arrived[i] += 1;
            }
        }
    }
    let rate = |n: usize| n as f64 / runs as f64;
    assert!((rate(arrived[0]) - 0.4).abs() < 0.03, "{arrived:?}");
    assert!((rate(arrived[1]) - 0.9).abs() < 0.03, "{arrived:?}");
}

#[test]
fn selector_falls_back_outside_the_model() {
    let spec = common::load("selector_mdp.lisa");
    let view = fixture_view(&spec);
    // An objective over a variable the model lacks cannot be evaluated.
    let configs = vec![(None, maximize("P=? [ F nowhere=1 ]", Future::Optimistic))];
    let mut sel = VerifiedSelector::new(view, configs, tight());
    let mut e = Engine::new(&spec, 0, Box::new(FirstDeclared)).unwrap();
    while applicable_plans(&spec, &e.state().agent).iter().all(|(_, ps)| ps.len() < 2) {
        e.step().unwrap();
    }
    let state = e.state().clone();
    let applicable = applicable_plans(&spec, &state.agent);
    let choices = lisa::reasoner::selection_choices(&applicable);
    let ctx = lisa::reasoner::SelectionContext {
        spec: &spec,
        cycle: e.cycle(),
        state: &state,
        applicable: &applicable,
        choices: &choices,
    };
    use lisa::reasoner::PlanSelector;
    assert_eq!(choices[sel.select(&ctx)], vec![PlanId(0)]);
    assert_eq!(sel.fallbacks, 1);
}

const SKILLED: &str = "cadence 2
skill P=? [ F arrived=1 ] >= THRESHOLD -> ^[Hopeful]
";

fn skilled(threshold: f64) -> AgentSpec {
    let text = common::read_data("selector_mdp.lisa") + &SKILLED.replace("THRESHOLD", &threshold.to_string());
    common::parse_text(&text)
}

#[test]
fn skills_compare_against_thresholds() {
    for (threshold, expect) in [(0.5, true), (0.9, true), (0.95, false)] {
        let spec = skilled(threshold);
        let view = fixture_view(&spec);
        let hopeful = spec.belief_id("hopeful").unwrap();
        let skill = VerificationSkill::from_spec(&spec);
        assert_eq!(skill.cadence, 2);
        let s = view.lookup(&clash_state(&spec));
        let once = skill_step(&view.model, s, &skill, &tight());
        assert_eq!(once, vec![(hopeful, expect)], "threshold {threshold}");
        assert_eq!(skill_step(&view.model, s, &skill, &tight()), once);
        assert!(skill_step(&view.model, None, &skill, &tight()).is_empty());
    }
}

#[test]
fn skills_run_inside_the_cycle() {
    let spec = skilled(0.5);
    let view = fixture_view(&spec);
    let mut e = Engine::new(&spec, 0, Box::new(FirstDeclared)).unwrap();
    e.add_hook(Box::new(SkillRunner::new(view, VerificationSkill::from_spec(&spec), tight())));
    let traces = e.run(8).unwrap();
    for t in &traces {
        assert_eq!(t.injected.is_empty(), t.cycle % 2 == 1, "{}", t.to_line());
    }
    assert_eq!(traces[0].injected, vec!["+hopeful".to_string()]);
    assert!(traces[0].beliefs.iter().any(|b| b == "hopeful"));
}

#[test]
fn skills_do_not_change_behaviour() {
    let spec = skilled(0.5);
    let view = fixture_view(&spec);
    for seed in 0..50 {
        let plain = Engine::new(&spec, seed, Box::new(FirstDeclared)).unwrap().run(12).unwrap();
        let mut e = Engine::new(&spec, seed, Box::new(FirstDeclared)).unwrap();
        e.add_hook(Box::new(SkillRunner::new(view.clone(), VerificationSkill::from_spec(&spec), tight())));
        let skilled = e.run(12).unwrap();
        for (a, b) in plain.iter().zip(&skilled) {
            assert_eq!((&a.selected, &a.executed, &a.invoked), (&b.selected, &b.executed, &b.invoked));
            assert_eq!(a.percepts, b.percepts);
        }
    }
}

struct Shared(Rc<RefCell<SkillWorker>>);

impl CycleHook for Shared {
    fn before_selection(&mut self, spec: &AgentSpec, cycle: u64, state: &ClosedState) -> Vec<(BeliefId, bool)> {
        self.0.borrow_mut().before_selection(spec, cycle, state)
    }
}

#[test]
fn worker_reports_carry_their_cycle() {
    let spec = skilled(0.5);
    let view = fixture_view(&spec);
    let worker = Rc::new(RefCell::new(SkillWorker::spawn(view, VerificationSkill::from_spec(&spec), tight())));
    let mut e = Engine::new(&spec, 0, Box::new(FirstDeclared)).unwrap();
    e.add_hook(Box::new(Shared(worker.clone())));
    for _ in 0..20 {
        e.step().unwrap();
        worker.borrow_mut().wait_idle();
    }
    let w = worker.borrow();
    let log = w.applied();
    assert!(!log.is_empty());
    for (applied_at, report) in log {
        assert_eq!(report.cycle % 2, 0);
        assert!(report.cycle < *applied_at, "{report:?} at {applied_at}");
    }
    // Checks are submitted at every due cycle because each one finishes
    // before the next cycle starts.
    let cycles: Vec<u64> = log.iter().map(|(_, r)| r.cycle).collect();
    assert_eq!(cycles, (0..19).step_by(2).collect::<Vec<u64>>());
}
