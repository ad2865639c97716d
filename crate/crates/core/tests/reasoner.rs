mod common;

use lisa::abstraction::{build, BuildOptions, KindRequest};
use lisa::agent_model::AgentSpec;
use lisa::reasoner::{ClosedState, CycleHook, CycleTrace, Engine, FirstDeclared, UniformRandom};

const DOOR: &str = "PERCEPTION PROCESS
Door open. {[],[1,2,0],[1,3,0]}
ACTIONS
Close door. ^[Door closed][1,1,0]
EXECUTABLE PLANS
If ^[Door open] while true then
+^[A], [Close door.], +^[B].
";

fn run(spec: &AgentSpec, seed: u64, cycles: u64, random: bool) -> Vec<CycleTrace> {
    let selector: Box<dyn lisa::reasoner::PlanSelector> = if random {
        Box::new(UniformRandom::new(seed ^ 0x5eed))
    } else {
        Box::new(FirstDeclared)
    };
    Engine::new(spec, seed, selector).unwrap().run(cycles).unwrap()
}

fn holds(t: &CycleTrace, belief: &str) -> bool {
    t.beliefs.iter().any(|b| b == belief)
}

#[test]
fn body_steps_take_one_cycle_each() {
    let spec = common::parse_text(DOOR);
    let traces = run(&spec, 0, 12, false);
    let start = traces.iter().position(|t| t.selected == vec![1]).unwrap();
    for (k, t) in traces[start..start + 3].iter().enumerate() {
        assert_eq!(t.executed, vec![format!("plan_1:{}", k + 1)], "{}", t.to_line());
    }
    assert!(traces[start + 3].executed.is_empty());
    assert_eq!(traces[start + 1].invoked, vec!["close_door".to_string()]);
}

#[test]
fn feedback_is_a_one_cycle_pulse() {
    let spec = common::parse_text(DOOR);
    let traces = run(&spec, 0, 40, false);
    for (i, t) in traces.iter().enumerate() {
        if !t.invoked.is_empty() {
            assert!(holds(t, "door_closed"), "{}", t.to_line());
            assert!(!holds(&traces[i + 1], "door_closed"), "{}", traces[i + 1].to_line());
        } else {
            assert!(!holds(t, "door_closed"), "{}", t.to_line());
        }
    }
}

#[test]
fn certain_percepts_alternate_with_fixed_periods() {
    // Two cycles to switch on, three to switch off.
    let spec = common::parse_text(DOOR);
    for t in run(&spec, 3, 60, false) {
        assert_eq!(holds(&t, "door_open"), matches!(t.cycle % 5, 1..=3), "{}", t.to_line());
    }
}

#[test]
fn seeded_runs_are_reproducible() {
    let spec = common::load("asv_mdp.lisa");
    for seed in [0, 1, 42] {
        assert_eq!(run(&spec, seed, 300, true), run(&spec, seed, 300, true));
    }
    let a = run(&spec, 1, 300, true);
    assert!((2..20).any(|s| run(&spec, s, 300, true) != a));
}

#[test]
fn initial_actions_run_in_slot_zero() {
    let spec = common::load("asv_dtmc.lisa");
    let t = &run(&spec, 0, 1, false)[0];
    assert_eq!(t.executed, vec!["plan_0:1".to_string()]);
    assert_eq!(t.invoked, vec!["generate_set_of_waypoints".to_string()]);
}

#[test]
fn simulation_follows_built_models() {
    for (name, kind, random) in [
        ("asv_dtmc.lisa", KindRequest::Auto, false),
        ("asv_mdp.lisa", KindRequest::Auto, true),
        ("asv_mdp.lisa", KindRequest::Determinized, false),
        ("selector_mdp.lisa", KindRequest::Auto, true),
    ] {
        let spec = common::load(name);
        let a = build(&spec, &BuildOptions { kind, keep_index: true, ..BuildOptions::default() }).unwrap();
        let index = a.index.as_ref().unwrap();
        for seed in 0..40 {
            let selector: Box<dyn lisa::reasoner::PlanSelector> = if random {
                Box::new(UniformRandom::new(seed))
            } else {
                Box::new(FirstDeclared)
            };
            let mut engine = Engine::new(&spec, seed, selector).unwrap();
            let p = common::follow_trace(&mut engine, &a.model, index, 150)
                .unwrap_or_else(|e| panic!("{name} {kind:?} seed {seed}: {e}"));
            assert!(p > 0.0);
        }
    }
}

#[test]
fn random_programs_follow_built_models() {
    for seed in 0..30u64 {
        let spec = common::parse_text(&common::random_program(seed, seed % 2 == 0));
        let a = build(&spec, &BuildOptions { keep_index: true, ..BuildOptions::default() }).unwrap();
        let mut engine = Engine::new(&spec, seed, Box::new(UniformRandom::new(seed))).unwrap();
        common::follow_trace(&mut engine, &a.model, a.index.as_ref().unwrap(), 80)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

struct Inject(lisa::agent_model::BeliefId, u64);

impl CycleHook for Inject {
    fn before_selection(
        &mut self,
        _spec: &AgentSpec,
        cycle: u64,
        _state: &ClosedState,
    ) -> Vec<(lisa::agent_model::BeliefId, bool)> {
        if cycle == self.1 {
            vec![(self.0, true)]
        } else {
            Vec::new()
        }
    }
}

#[test]
fn hooks_inject_notes_at_the_next_update() {
    let spec = common::parse_text(DOOR);
    let b = spec.belief_id("b").unwrap();
    let mut engine = Engine::new(&spec, 0, Box::new(FirstDeclared)).unwrap();
    engine.add_hook(Box::new(Inject(b, 1)));
    let traces = engine.run(3).unwrap();
    assert!(!holds(&traces[0], "b"));
    assert_eq!(traces[1].injected, vec!["+b".to_string()]);
    assert!(holds(&traces[1], "b"));
    assert!(traces[2].events.contains(&"+b".to_string()));
}
