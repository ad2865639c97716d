use std::path::PathBuf;
use std::process::{Command, Output};

use lisa::abstraction::{write_model, ModelKind, ProbModel};
use serde_json::Value;

fn data(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "data", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn lisa(args: &[&str]) -> Output {
    lisa_env(args, &[])
}

fn lisa_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lisa"));
    cmd.args(args).env_remove("LISA_WORKERS").env("RUST_LOG", "off");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run lisa")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Parses machine output; every line must be a versioned record.
fn records(o: &Output) -> Vec<Value> {
    stdout(o)
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap_or_else(|e| panic!("not JSON: {l}: {e}"));
            assert_eq!(v["schema"], "lisa/1", "{l}");
            assert!(v["record"].is_string(), "{l}");
            v
        })
        .collect()
}

fn record<'a>(recs: &'a [Value], kind: &str) -> &'a Value {
    recs.iter().find(|r| r["record"] == kind).unwrap_or_else(|| panic!("no {kind} record in {recs:?}"))
}

#[test]
fn parse_summarizes_the_benchmark() {
    let o = lisa(&["parse", &data("asv_dtmc.lisa")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.starts_with("10 plans, 3 rules, 4 percepts, 4 actions, 5 feedbacks"),
        "{text}"
    );
    assert!(text.contains("DTMC-eligible"));

    let o = lisa(&["parse", &data("asv_mdp.lisa")]);
    assert!(stdout(&o).contains("clashing plans: plan_4/plan_5"));
}

#[test]
fn malformed_programs_fail_with_positions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.lisa");
    std::fs::write(
        &path,
        "PERCEPTION PROCESS\nDoor open. {[],[0.5,2,0]}\nEXECUTABLE PLANS\nIf ^[Door open] while true then\n[Close door.].\n",
    )
    .unwrap();
    let o = lisa(&["parse", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("bad.lisa:error[E006] 5:"), "{err}");
    assert!(stdout(&o).is_empty());

    let o = lisa(&["parse", "--machine", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
    let recs = records(&o);
    let d = record(&recs, "diagnostic");
    assert_eq!(d["code"], "E006");
    assert_eq!(d["severity"], "error");
    assert_eq!(d["span"]["line"], 5);
    assert_eq!(record(&recs, "error")["exit_code"], 1);

    let o = lisa(&["parse", "/nonexistent/file.lisa"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn machine_output_has_no_prose() {
    let o = lisa(&["parse", "--machine", &data("asv_dtmc.lisa")]);
    assert_eq!(code(&o), 0);
    let recs = records(&o);
    assert_eq!(recs.len(), 1);
    let s = &recs[0];
    assert_eq!(s["record"], "summary");
    assert_eq!((s["plans"].as_u64(), s["percepts"].as_u64(), s["feedbacks"].as_u64()), (Some(10), Some(4), Some(5)));
    assert_eq!(s["dtmc_eligible"], true);
    assert!(stderr(&o).is_empty());
}

#[test]
fn build_reports_model_size() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("asv.model");
    let o = lisa(&["build", "--machine", &data("asv_mdp.lisa"), "--out", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = records(&o);
    let b = record(&recs, "build");
    assert_eq!(b["kind"], "mdp");
    assert_eq!(b["states"], 3686);
    assert_eq!(b["transitions"], 5374);
    assert_eq!(b["choices"], 3777);
    assert!(b["build_seconds"].as_f64().unwrap() >= 0.0);
    assert!(b["memory_bytes"].as_u64().unwrap() > 0);
    assert!(std::fs::read_to_string(&model).unwrap().starts_with("lisa-model 1"));

    let o = lisa(&["build", &data("asv_dtmc.lisa")]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for field in ["model        dtmc", "states       2082", "transitions  2910", "choices      2082", "build time", "memory"] {
        assert!(text.contains(field), "missing {field}: {text}");
    }

    let o = lisa(&["build", "--machine", "--force-mdp", &data("asv_dtmc.lisa")]);
    assert_eq!(record(&records(&o), "build")["kind"], "mdp");
}

#[test]
fn forcing_a_dtmc_on_a_clash_is_a_user_error() {
    let o = lisa(&["build", "--kind", "dtmc", &data("asv_mdp.lisa")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("plan_4/plan_5"), "{}", stderr(&o));
    let o = lisa(&["emit-prism", "--kind", "dtmc", &data("asv_mdp.lisa")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn state_limit_exits_with_resource_code() {
    let o = lisa(&["build", "--max-states", "100", &data("asv_mdp.lisa")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("exceeds 100 states"), "{}", stderr(&o));
    let o = lisa(&["check", "--machine", "--max-states", "100", "--model", &data("asv_mdp.lisa"), "--query", "Pmin=? [ F mission_complete=1 ]"]);
    assert_eq!(code(&o), 2);
    assert_eq!(record(&records(&o), "error")["kind"], "resource");
}

#[test]
fn nonconvergence_exits_with_numeric_code() {
    let o = lisa(&["check", "--model", &data("asv_dtmc.lisa"), "--query", "P=? [ F mission_complete=1 ]", "--max-iterations", "3"]);
    assert_eq!(code(&o), 3);
    assert_eq!(stderr(&o).matches("did not converge").count(), 1, "{}", stderr(&o));
}

/// Twenty states on a ring with two shortcuts each; every fifth state is a goal.
fn toy() -> (Vec<Vec<(usize, f64)>>, Vec<bool>) {
    let n = 20;
    let succ = (0..n)
        .map(|i| {
            let mut t = vec![((i + 1) % n, 0.5), ((i * 7 + 3) % n, 0.3), ((i * 3 + 11) % n, 0.2)];
            t.sort_by_key(|(d, _)| *d);
            let mut merged: Vec<(usize, f64)> = Vec::new();
            for (d, p) in t {
                match merged.last_mut() {
                    Some((last, q)) if *last == d => *q += p,
                    _ => merged.push((d, p)),
                }
            }
            merged
        })
        .collect();
    let goal = (0..n).map(|i| i > 0 && i % 5 == 0).collect();
    (succ, goal)
}

/// Sum over every path of length at most `k` that first hits a goal.
fn enumerate(succ: &[Vec<(usize, f64)>], goal: &[bool], s: usize, k: u32) -> f64 {
    if goal[s] {
        return 1.0;
    }
    if k == 0 {
        return 0.0;
    }
    succ[s].iter().map(|(d, p)| p * enumerate(succ, goal, *d, k - 1)).sum()
}

#[test]
fn check_matches_path_enumeration_on_a_toy_model() {
    let (succ, goal) = toy();
    let model = ProbModel::from_choices(
        ModelKind::Dtmc,
        vec!["s".into(), "goal".into()],
        (0..succ.len()).map(|i| vec![i as i32, i32::from(goal[i])]).collect(),
        0,
        succ.iter()
            .map(|t| vec![t.iter().map(|(d, p)| (*d as u32, *p)).collect()])
            .collect(),
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.model");
    std::fs::write(&path, write_model(&model)).unwrap();
    let path = path.to_str().unwrap();

    let mut args = vec!["check", "--machine", "--model", path];
    let queries: Vec<String> = (0..=10).map(|k| format!("P=? [ F<={k} goal=1 ]")).collect();
    for q in &queries {
        args.extend(["--query", q.as_str()]);
    }
    let o = lisa(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = records(&o);
    assert_eq!(recs.len(), queries.len());
    for (k, r) in recs.iter().enumerate() {
        let want = enumerate(&succ, &goal, 0, k as u32);
        let got = r["value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&got));
        assert!((got - want).abs() < 1e-9, "k {k}: {got} vs {want}");
        assert_eq!(r["iterations"], k);
    }

    // From another state.
    let o = lisa(&["check", "--machine", "--model", path, "--query", "P=? [ F<=6 goal=1 ]", "--from", "s=7"]);
    let r = record(&records(&o), "check").clone();
    assert_eq!(r["state"], 7);
    assert!((r["value"].as_f64().unwrap() - enumerate(&succ, &goal, 7, 6)).abs() < 1e-9);

    // Qualitative form and human output.
    let o = lisa(&["check", "--model", path, "--query", "P>=0.5 [ F<=3 goal=1 ]"]);
    let want = enumerate(&succ, &goal, 0, 3) >= 0.5;
    assert!(stdout(&o).starts_with(&format!("P>=0.5 [ F<=3 goal=1 ] = {want}")), "{}", stdout(&o));

    let o = lisa(&["check", "--model", path, "--query", "P=? [ F<=3 goal=1 ]", "--from", "s=99"]);
    assert_eq!(code(&o), 1);
    let o = lisa(&["check", "--model", path, "--query", "Pmax=? [ F goal=1 ]"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("type error"), "{}", stderr(&o));
    let o = lisa(&["check", "--model", path, "--query", "P=? [ F goal= ]"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn benchmark_queries_agree_between_model_kinds() {
    let q = "P=? [ F<=100 mission_complete=1 ]";
    let o = lisa(&["check", "--machine", "--model", &data("asv_dtmc.lisa"), "--query", q]);
    let dtmc = record(&records(&o), "check")["value"].as_f64().unwrap();
    let o = lisa(&[
        "check", "--machine", "--force-mdp", "--model", &data("asv_dtmc.lisa"),
        "--query", "Pmin=? [ F<=100 mission_complete=1 ]",
        "--query", "Pmax=? [ F<=100 mission_complete=1 ]",
    ]);
    let recs = records(&o);
    assert_eq!(recs.len(), 2);
    for r in recs {
        assert!((r["value"].as_f64().unwrap() - dtmc).abs() < 1e-9);
        assert_eq!(r["model_kind"], "mdp");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let args = [
        "check", "--machine", "--model", &data("asv_mdp.lisa") as &str,
        "--query", "Pmin=? [ F<=100 mission_complete=1 ]",
        "--query", "Pmax=? [ F mission_complete=1 ]",
        "--query", "Pmin=? [ F re_exploring_areas=1 ]",
    ];
    let strip = |o: &Output| -> Vec<Value> {
        records(o)
            .into_iter()
            .map(|mut r| {
                r.as_object_mut().unwrap().remove("seconds");
                r
            })
            .collect()
    };
    let one = strip(&lisa_env(&args, &[("LISA_WORKERS", "1")]));
    let four = strip(&lisa_env(&args, &[("LISA_WORKERS", "4")]));
    let flag = strip(&lisa(&[&args[..], &["--workers", "3"]].concat()));
    assert_eq!(one.len(), 3);
    assert_eq!(one, four);
    assert_eq!(one, flag);
}

#[test]
fn emission_matches_the_golden_file() {
    let golden = std::fs::read_to_string(data("asv_dtmc.prism")).unwrap();
    let o = lisa(&["emit-prism", &data("asv_dtmc.lisa")]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), golden);
    let o = lisa(&["emit", &data("asv_dtmc.lisa")]);
    assert_eq!(stdout(&o), golden);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("asv.nm");
    let o = lisa(&[
        "emit", &data("asv_mdp.lisa"), "--out", out.to_str().unwrap(),
        "--query", "Pmin=? [F<=100 mission_complete=1]",
        "--query", "Pmax=? [F<=100 mission_complete=1]",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("mdp\n"));
    let props = std::fs::read_to_string(dir.path().join("asv.props")).unwrap();
    assert_eq!(
        props,
        "Pmin=? [ F<=100 mission_complete=1 ]\nPmax=? [ F<=100 mission_complete=1 ]\n"
    );
    let o = lisa(&["emit", &data("asv_mdp.lisa"), "--query", "Pmin=? [ F nonsense=1 ]"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let run = |seed: &str, policy: &str| {
        let o = lisa(&["simulate", &data("asv_mdp.lisa"), "--cycles", "200", "--seed", seed, "--policy", policy]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
    };
    let a = run("7", "random");
    assert_eq!(a.lines().count(), 200);
    assert!(a.lines().next().unwrap().starts_with("cycle=0 "));
    assert_eq!(a, run("7", "random"));
    assert!(["8", "9", "10", "11"].iter().any(|s| run(s, "random") != a));
    assert_eq!(run("3", "first"), run("3", "first"));

    let o = lisa(&["simulate", "--machine", &data("asv_mdp.lisa"), "--cycles", "5"]);
    let recs = records(&o);
    let cycles: Vec<&Value> = recs.iter().filter(|r| r["record"] == "cycle").collect();
    assert_eq!(cycles.len(), 5);
    for (i, c) in cycles.iter().enumerate() {
        assert_eq!(c["cycle"], i as u64);
        assert!(c["beliefs"].is_array() && c["events"].is_array() && c["lambdas"].is_array());
    }
    assert_eq!(record(&recs, "simulation")["policy"], "first");
}

#[test]
fn verified_policy_prefers_the_reliable_route() {
    let o = lisa(&["simulate", "--machine", &data("selector_mdp.lisa"), "--cycles", "40", "--policy", "verified"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = records(&o);
    let picks: Vec<&Value> = recs
        .iter()
        .filter(|r| r["record"] == "cycle" && !r["selected"].as_array().unwrap().is_empty())
        .map(|r| &r["selected"])
        .collect();
    assert!(!picks.is_empty());
    assert!(picks.iter().all(|p| **p == serde_json::json!([2])), "{picks:?}");
    let s = record(&recs, "simulation");
    assert_eq!(s["policy"], "verified");
    assert_eq!(s["fallbacks"], 0);

    let o = lisa(&["simulate", &data("asv_mdp.lisa"), "--policy", "verified"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--objective"), "{}", stderr(&o));
}

#[test]
fn select_plan_ranks_candidates() {
    let state = "transit_requested=1 & ev_transit_requested=1 & plan_1=0 & plan_2=0";
    let o = lisa(&["select-plan", "--machine", "--model", &data("selector_mdp.lisa"), "--state", state]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = records(&o);
    let r = record(&recs, "select");
    assert_eq!(r["selected"], "plan_2");
    let scores = r["scores"].as_array().unwrap();
    assert!((scores[0]["value"].as_f64().unwrap() - 0.4).abs() < 1e-9);
    assert!((scores[1]["value"].as_f64().unwrap() - 0.9).abs() < 1e-9);

    let o = lisa(&[
        "select-plan", "--machine", "--model", &data("selector_mdp.lisa"), "--state", state,
        "--objective", "P=? [ F arrived=1 ]", "--minimize",
    ]);
    assert_eq!(record(&records(&o), "select")["selected"], "plan_1");

    // A saved model needs an explicit objective.
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("sel.model");
    let o = lisa(&["build", &data("selector_mdp.lisa"), "--out", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let m = model.to_str().unwrap();
    let o = lisa(&["select-plan", "--model", m, "--state", state]);
    assert_eq!(code(&o), 1);
    let o = lisa(&["select-plan", "--model", m, "--state", state, "--objective", "Pmax=? [ F arrived=1 ]"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("state #"), "{}", stdout(&o));
    assert!(stdout(&o).contains("plan_2 selected"));

    // One candidate is returned without checking.
    let o = lisa(&["select-plan", "--machine", "--model", m, "--state", state, "--objective", "Pmax=? [ F arrived=1 ]", "--plans", "1"]);
    let r = record(&records(&o), "select").clone();
    assert_eq!(r["selected"], "plan_1");
    assert!(r["scores"].as_array().unwrap().is_empty());

    let o = lisa(&["select-plan", "--model", m, "--state", "#0", "--objective", "Pmax=? [ F arrived=1 ]"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no plans contend"), "{}", stderr(&o));
}

#[test]
fn bad_flags_are_user_errors() {
    for args in [
        &["check", "--model", "x.lisa", "--query", "P=? [ F a=1 ]", "--epsilon", "0"][..],
        &["check", "--model", "x.lisa", "--query", "P=? [ F a=1 ]", "--workers", "0"][..],
    ] {
        assert_eq!(code(&lisa(args)), 1, "{args:?}");
    }
}
