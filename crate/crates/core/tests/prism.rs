mod common;

use lisa::abstraction::ModelKind;
use lisa::pctl::parse_query;
use lisa::prism::{emit, emit_query, parse_prism, EmitError, EmitOptions, Item, Label};
use proptest::prelude::*;

const GOLDEN: &str = "asv_dtmc.prism";

fn emitted(name: &str) -> String {
    emit(&common::load(name), &EmitOptions::default()).unwrap().to_string()
}

/// Set `LISA_BLESS=1` to rewrite the golden file after an intended change.
#[test]
fn benchmark_matches_golden_file() {
    let text = emitted("asv_dtmc.lisa");
    if std::env::var_os("LISA_BLESS").is_some() {
        std::fs::write(common::data_path(GOLDEN), &text).unwrap();
    }
    let golden = common::read_data(GOLDEN);
    if text != golden {
        let line = text.lines().zip(golden.lines()).position(|(a, b)| a != b);
        panic!("emission differs from {GOLDEN} at line {:?}", line.map(|l| l + 1));
    }
}

#[test]
fn benchmark_has_the_plan_fragment_pattern() {
    let text = emitted("asv_dtmc.lisa");
    for line in [
        "plan_5: [0..4] init 0;",
        "[t] plan_5=0 & !(plan_4=0 & block_explored=1 & (areas_left_unexplored=1 & sea_state_is_too_high=0)) -> (plan_5'=0);",
        "[t] plan_5=0 & (plan_4=0 & block_explored=1 & (areas_left_unexplored=1 & sea_state_is_too_high=0)) -> (plan_5'=1);",
        "//activate_park_mode",
        "[t] plan_5=1 & !(park_mode=1) -> (plan_5'=1);",
        "[t] plan_5=1 & (park_mode=1) -> (plan_5'=2);",
        "[t] plan_5=4 & (drive_mode=1) -> (plan_5'=0);",
        "plan_8: [0..3] init 0;",
        "[t] plan_8=2 & !(continue=1 | abort=1) -> (plan_8'=2);",
        "[t] plan_8=2 & (continue=1 | abort=1) -> (plan_8'=3);",
        "continue: [0..5] init 0;",
        "abort: [0..5] init 0;",
        "//continue[0.6,5,0] abort[0.4,5,0]",
        "[p] (plan_8=2) & (continue<=1 & abort<=1) -> 0.6:(continue'=5) + 0.4:(abort'=5);",
        "[p] continue>1 -> (continue'=continue-1);",
        "//{[],[0.5,10,0]}",
    ] {
        assert!(text.lines().any(|l| l == line), "missing line: {line}");
    }
}

#[test]
fn plan_steps_come_in_guard_pairs() {
    let doc = emit(&common::load("asv_dtmc.lisa"), &EmitOptions::default()).unwrap();
    for slot in 1..=10 {
        let name = format!("plan_{slot}");
        let m = doc.module(&name).unwrap();
        let cmds: Vec<_> = m.commands().collect();
        assert_eq!(cmds.len() % 2, 0, "{name}");
        for pair in cmds.chunks(2) {
            assert_eq!(pair[0].label, Label::T);
            assert_eq!(pair[1].label, Label::T);
            let (a, b) = (pair[0].guard.to_string(), pair[1].guard.to_string());
            let (head, cond) = b.split_once(" & ").unwrap();
            assert_eq!(a, format!("{head} & !{cond}"), "{name}");
        }
        let steps = doc.var(&name).unwrap().hi as usize;
        assert_eq!(cmds.len(), 2 * (steps + 1), "{name}");
        let comments = m.items.iter().filter(|i| matches!(i, Item::Comment(_))).count();
        assert_eq!(comments, steps, "{name}");
    }
}

#[test]
fn mdp_variant_declines_clashing_plans() {
    let dtmc = emitted("asv_dtmc.lisa");
    let mdp = emitted("asv_mdp.lisa");
    assert!(dtmc.starts_with("dtmc\n"));
    assert!(mdp.starts_with("mdp\n"));
    assert!(!dtmc.contains("//decline"));
    assert_eq!(mdp.matches("//decline").count(), 2);
    assert!(!mdp.contains("plan_4=0 & block_explored"));
}

#[test]
fn emission_is_byte_deterministic() {
    for name in ["asv_dtmc.lisa", "asv_mdp.lisa", "selector_mdp.lisa"] {
        let runs: Vec<String> = (0..5).map(|_| emitted(name)).collect();
        assert!(runs.windows(2).all(|w| w[0] == w[1]), "{name}");
    }
}

#[test]
fn emitted_documents_parse_back() {
    for name in ["asv_dtmc.lisa", "asv_mdp.lisa", "selector_mdp.lisa"] {
        let doc = emit(&common::load(name), &EmitOptions::default()).unwrap();
        let back = parse_prism(&doc.to_string()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(back, doc, "{name}");
    }
}

#[test]
fn every_module_is_always_enabled() {
    for name in ["asv_dtmc.lisa", "asv_mdp.lisa", "selector_mdp.lisa"] {
        for kind in [ModelKind::Dtmc, ModelKind::Mdp] {
            let doc = emit(&common::load(name), &EmitOptions { kind: Some(kind) }).unwrap();
            let gaps = doc.check_exhaustive(1 << 20);
            assert!(gaps.is_empty(), "{name} as {kind}: {gaps:#?}");
        }
    }
}

#[test]
fn queries_render_in_property_syntax() {
    let doc = emit(&common::load("asv_mdp.lisa"), &EmitOptions::default()).unwrap();
    let render = |q: &str| emit_query(&doc, &parse_query(q).unwrap(), None);
    assert_eq!(
        render("Pmin=? [F<=100 mission_complete=1]").unwrap(),
        "Pmin=? [ F<=100 mission_complete=1 ]"
    );
    assert_eq!(
        render("Pmax=? [ F (plan_2=1 & plan_4=2) ]").unwrap(),
        "Pmax=? [ F (plan_2=1 & plan_4=2) ]"
    );
    assert_eq!(render("P=? [ F true ]").unwrap(), "P=? [ F true ]");
    assert_eq!(
        render("Pmax=? [ F nonsense=1 ]").unwrap_err(),
        EmitError::UnknownVariable("nonsense".into())
    );
    let q = parse_query("Pmax=? [ F mission_complete=1 ]").unwrap();
    let at = [("plan_8".to_string(), 2), ("sea_state_is_too_high".to_string(), 1)];
    assert_eq!(
        emit_query(&doc, &q, Some(&at)).unwrap(),
        "filter(state, Pmax=? [ F mission_complete=1 ], phase=0 & plan_8=2 & sea_state_is_too_high=1)"
    );
    let bad = [("plan_99".to_string(), 1)];
    assert!(emit_query(&doc, &q, Some(&bad)).is_err());
}

#[test]
fn program_without_plans_keeps_environment_modules() {
    let mut spec = common::load("asv_mdp.lisa");
    spec.plans.clear();
    spec.initial_actions.clear();
    let doc = emit(&spec, &EmitOptions::default()).unwrap();
    assert_eq!(doc.kind, ModelKind::Dtmc);
    assert_eq!(doc.modules[0].name, "reasoning_cycle");
    assert!(doc.modules.iter().all(|m| !m.name.starts_with("plan_")));
    for percept in ["sea_state_is_too_high", "i_am_at_global_waypoint", "areas_left_unexplored", "last_waypoint_reached"] {
        assert!(doc.module(percept).is_some(), "{percept}");
    }
    assert!(doc.check_exhaustive(1 << 20).is_empty());
}

#[test]
fn name_clashes_are_reported() {
    let spec = common::parse_text(
        "PERCEPTION PROCESS
Door open. {[],[0.5,2,0]}
ACTIONS
Door open. ^[Done][1,1,0]
EXECUTABLE PLANS
If ^[Door open] while true then
[Door open.].
",
    );
    match emit(&spec, &EmitOptions::default()) {
        Err(EmitError::Collision { name, .. }) => assert_eq!(name, "door_open"),
        other => panic!("{other:?}"),
    }
    let spec = common::parse_text(
        "PERCEPTION PROCESS
Init. {[],[0.5,2,0]}
EXECUTABLE PLANS
If ^[Init] while true then
+^[Seen].
",
    );
    match emit(&spec, &EmitOptions::default()) {
        Err(EmitError::Keyword { name, .. }) => assert_eq!(name, "init"),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_programs_emit_well_formed_models(seed in any::<u64>(), clash in any::<bool>()) {
        let spec = common::parse_text(&common::random_program(seed, clash));
        let doc = emit(&spec, &EmitOptions::default()).unwrap();
        prop_assert_eq!(doc.kind, if clash { ModelKind::Mdp } else { ModelKind::Dtmc });
        let text = doc.to_string();
        prop_assert_eq!(&parse_prism(&text).unwrap(), &doc);
        prop_assert_eq!(emit(&spec, &EmitOptions::default()).unwrap().to_string(), text);
        let gaps = doc.check_exhaustive(1 << 20);
        prop_assert!(gaps.is_empty(), "{:#?}", gaps);
    }
}
