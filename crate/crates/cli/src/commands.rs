use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use lisa::abstraction::{build, read_model, write_model, BuildError, BuildOptions, KindRequest, ModelKind, ProbModel, StateSpec};
use lisa::agent_model::{AgentSpec, Direction, PlanId};
use lisa::dsl::{self, Diagnostic};
use lisa::pctl::{check, check_from, parse_query, CheckError, CheckOptions, CheckResult, Query};
use lisa::prism::{emit, emit_query, EmitOptions};
use lisa::reasoner::{Engine, FirstDeclared, PlanSelector, UniformRandom};
use lisa::runtime::{verified_select, ModelView, SelectorConfig, SkillRunner, VerificationSkill, VerifiedSelector};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::output::{format_bytes, Out};
use crate::{Cli, CliError, Command, Global, KindOpts, Policy};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli, out: &mut Out) -> Result<()> {
    let g = &cli.global;
    if !(g.epsilon > 0.0 && g.epsilon.is_finite()) {
        return Err(CliError::User(format!("--epsilon must be positive, got {}", g.epsilon)));
    }
    if g.workers == Some(0) {
        return Err(CliError::User("--workers must be at least 1".into()));
    }
    match &cli.command {
        Command::Parse { file } => cmd_parse(file, out),
        Command::Build { file, kind, out: path } => cmd_build(g, file, kind, path.as_deref(), out),
        Command::Check { model, queries, from, kind } => cmd_check(g, model, queries, from.as_deref(), kind, out),
        Command::EmitPrism { file, kind, out: path, queries, props } => {
            cmd_emit(file, kind, path.as_deref(), queries, props.as_deref(), out)
        }
        Command::Simulate { file, cycles, policy, objective, minimize, future } => {
            let objective = objective.as_deref().map(|q| (q, direction(*minimize)));
            cmd_simulate(g, file, *cycles, *policy, objective, (*future).into(), out)
        }
        Command::SelectPlan { model, state, objective, minimize, future, plans } => {
            let cfg = SelectArgs {
                state,
                objective: objective.as_deref(),
                direction: direction(*minimize),
                future: (*future).into(),
                plans,
            };
            cmd_select(g, model, &cfg, out)
        }
    }
}

fn direction(minimize: bool) -> Direction {
    if minimize {
        Direction::Minimize
    } else {
        Direction::Maximize
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct DiagnosticRecord<'a> {
    file: String,
    #[serde(flatten)]
    diagnostic: &'a Diagnostic,
}

fn report_diagnostics(path: &Path, diags: &[Diagnostic], out: &mut Out) -> Result<()> {
    for d in diags {
        if out.machine() {
            out.record(
                "diagnostic",
                DiagnosticRecord {
                    file: path.display().to_string(),
                    diagnostic: d,
                },
            )?;
        } else {
            eprintln!("{}:{d}", path.display());
        }
    }
    Ok(())
}

/// Parses a program, reporting warnings and, on failure, every diagnostic.
fn load_program(path: &Path, out: &mut Out) -> Result<AgentSpec> {
    let text = read(path)?;
    match dsl::parse(&text) {
        Ok(parsed) => {
            report_diagnostics(path, &parsed.warnings, out)?;
            Ok(parsed.spec)
        }
        Err(failure) => {
            report_diagnostics(path, &failure.diagnostics, out)?;
            let n = failure.errors().count();
            Err(CliError::Reported(1, format!("{}: {n} error(s)", path.display())))
        }
    }
}

/// Input of `check` and `select-plan`: a program to build, or a saved model.
enum Source {
    Program(Box<AgentSpec>),
    Model(Box<ProbModel>),
}

fn load_source(path: &Path, out: &mut Out) -> Result<Source> {
    let is_program = path.extension().is_some_and(|e| e == "lisa");
    if is_program {
        return Ok(Source::Program(Box::new(load_program(path, out)?)));
    }
    let text = read(path)?;
    if text.trim_start().starts_with("lisa-model") {
        let model = read_model(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        Ok(Source::Model(Box::new(model)))
    } else {
        Ok(Source::Program(Box::new(load_program(path, out)?)))
    }
}

fn build_options(g: &Global, kind: KindRequest, keep_index: bool) -> BuildOptions {
    BuildOptions {
        kind,
        max_states: g.max_states,
        workers: g.workers,
        keep_index,
        ..BuildOptions::default()
    }
}

fn check_options(g: &Global) -> CheckOptions {
    CheckOptions {
        epsilon: g.epsilon,
        max_iterations: g.max_iterations,
    }
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("{n} {word}")
    } else {
        format!("{n} {word}s")
    }
}

fn cmd_parse(path: &Path, out: &mut Out) -> Result<()> {
    let spec = load_program(path, out)?;
    let elig = spec.dtmc_eligibility();
    let clashes: Vec<[String; 2]> = elig.clashes.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect();
    out.record(
        "summary",
        json!({
            "file": path.display().to_string(),
            "plans": spec.plans.len(),
            "rules": spec.rules.len(),
            "percepts": spec.percepts.len(),
            "actions": spec.actions.len(),
            "feedbacks": spec.feedback_count(),
            "beliefs": spec.beliefs.len(),
            "initial_actions": spec.initial_actions.len(),
            "dtmc_eligible": elig.eligible,
            "clashes": clashes,
        }),
    )?;
    out.line(format!(
        "{}, {}, {}, {}, {}, {}",
        plural(spec.plans.len(), "plan"),
        plural(spec.rules.len(), "rule"),
        plural(spec.percepts.len(), "percept"),
        plural(spec.actions.len(), "action"),
        plural(spec.feedback_count(), "feedback"),
        plural(spec.beliefs.len(), "belief"),
    ))?;
    if elig.eligible {
        out.line("DTMC-eligible: plan selection is deterministic")?;
    } else {
        let pairs: Vec<String> = clashes.iter().map(|[a, b]| format!("{a}/{b}")).collect();
        out.line(format!("not DTMC-eligible; clashing plans: {}", pairs.join(", ")))?;
    }
    Ok(())
}

fn cmd_build(g: &Global, path: &Path, kind: &KindOpts, dest: Option<&Path>, out: &mut Out) -> Result<()> {
    let spec = load_program(path, out)?;
    let a = build(&spec, &build_options(g, kind.request(), false))?;
    if let Some(dest) = dest {
        write(dest, &write_model(&a.model))?;
    }
    let r = &a.report;
    let clashes: Vec<[String; 2]> = r
        .eligibility
        .clashes
        .iter()
        .map(|(a, b)| [a.to_string(), b.to_string()])
        .collect();
    out.record(
        "build",
        json!({
            "file": path.display().to_string(),
            "kind": r.kind,
            "states": r.states,
            "transitions": r.transitions,
            "choices": r.choices,
            "max_choices": r.max_choices,
            "depth": r.depth,
            "build_seconds": r.elapsed.as_secs_f64(),
            "memory_bytes": r.memory_bytes,
            "dtmc_eligible": r.eligibility.eligible,
            "clashes": clashes,
            "out": dest.map(|p| p.display().to_string()),
        }),
    )?;
    out.line(format!("model        {}", r.kind))?;
    out.line(format!("states       {}", r.states))?;
    out.line(format!("transitions  {}", r.transitions))?;
    out.line(format!("choices      {}", r.choices))?;
    out.line(format!("max choices  {}", r.max_choices))?;
    out.line(format!("depth        {}", r.depth))?;
    out.line(format!("build time   {:.3} s", r.elapsed.as_secs_f64()))?;
    out.line(format!("memory       {}", format_bytes(r.memory_bytes)))?;
    if !r.eligibility.eligible {
        let pairs: Vec<String> = clashes.iter().map(|[a, b]| format!("{a}/{b}")).collect();
        out.line(format!("clashes      {}", pairs.join(", ")))?;
    }
    if let Some(dest) = dest {
        out.line(format!("written to   {}", dest.display()))?;
    }
    Ok(())
}

/// Model for `check`/`select-plan`, plus the spec when built here.
struct Loaded {
    model: ProbModel,
    spec: Option<AgentSpec>,
}

fn load_model(g: &Global, path: &Path, kind: KindRequest, out: &mut Out) -> Result<Loaded> {
    match load_source(path, out)? {
        Source::Model(model) => Ok(Loaded {
            model: *model,
            spec: None,
        }),
        Source::Program(spec) => {
            let a = build(&spec, &build_options(g, kind, false))?;
            info!(
                "built {} with {} states in {:.3} s",
                a.report.kind,
                a.report.states,
                a.report.elapsed.as_secs_f64()
            );
            Ok(Loaded {
                model: a.model,
                spec: Some(*spec),
            })
        }
    }
}

fn parse_queries(texts: &[String]) -> Result<Vec<Query>> {
    texts
        .iter()
        .map(|t| parse_query(t).map_err(|e| CliError::User(format!("query `{t}`: {e}"))))
        .collect()
}

fn resolve_state(model: &ProbModel, text: &str) -> Result<usize> {
    let spec = StateSpec::parse(text).map_err(|e| CliError::User(e.to_string()))?;
    model.resolve_state(&spec).map_err(|e| CliError::User(e.to_string()))
}

fn worker_count(g: &Global, jobs: usize) -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    g.workers.unwrap_or(default).clamp(1, jobs.max(1))
}

type Checked = (std::result::Result<CheckResult, CheckError>, Duration);

/// Checks queries independently, spread over `workers` threads. Results are
/// returned in query order.
fn check_all(model: &ProbModel, queries: &[Query], from: Option<usize>, opts: &CheckOptions, workers: usize) -> Vec<Checked> {
    let one = |q: &Query| {
        let start = Instant::now();
        let r = match from {
            Some(s) => check_from(model, q, s, opts),
            None => check(model, q, opts),
        };
        (r, start.elapsed())
    };
    if workers <= 1 {
        return queries.iter().map(one).collect();
    }
    let mut slots: Vec<Option<Checked>> = (0..queries.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let one = &one;
                scope.spawn(move || {
                    (w..queries.len())
                        .step_by(workers)
                        .map(|i| (i, one(&queries[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("query worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every query checked")).collect()
}

fn cmd_check(g: &Global, path: &Path, texts: &[String], from: Option<&str>, kind: &KindOpts, out: &mut Out) -> Result<()> {
    let queries = parse_queries(texts)?;
    let loaded = load_model(g, path, kind.request(), out)?;
    let model = &loaded.model;
    let state = from.map(|f| resolve_state(model, f)).transpose()?;
    let opts = check_options(g);
    let results = check_all(model, &queries, state, &opts, worker_count(g, queries.len()));
    let mut first_err = None;
    for ((q, text), (r, elapsed)) in queries.iter().zip(texts).zip(results) {
        match r {
            Ok(r) => {
                out.record(
                    "check",
                    json!({
                        "query": q.to_string(),
                        "model_kind": model.kind,
                        "state": state.unwrap_or(model.initial as usize),
                        "value": if r.value.is_finite() { json!(r.value) } else { json!("inf") },
                        "satisfied": r.satisfied,
                        "iterations": r.iterations,
                        "residual": r.residual,
                        "seconds": elapsed.as_secs_f64(),
                    }),
                )?;
                let verdict = match r.satisfied {
                    Some(b) => b.to_string(),
                    None => r.value.to_string(),
                };
                out.line(format!(
                    "{q} = {verdict}  ({} iterations, residual {:.3e}, {:.3} s)",
                    r.iterations,
                    r.residual,
                    elapsed.as_secs_f64()
                ))?;
            }
            Err(e) => {
                let e: CliError = e.into();
                let e = match e {
                    CliError::User(m) => CliError::User(format!("query `{text}`: {m}")),
                    other => other,
                };
                if !out.machine() {
                    eprintln!("error: {e}");
                }
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        None => Ok(()),
        Some(e) if out.machine() => Err(e),
        Some(e) => Err(e.reported()),
    }
}

fn cmd_emit(
    path: &Path,
    kind: &KindOpts,
    dest: Option<&Path>,
    texts: &[String],
    props: Option<&Path>,
    out: &mut Out,
) -> Result<()> {
    let spec = load_program(path, out)?;
    let kind = match kind.request() {
        KindRequest::Auto => None,
        KindRequest::Mdp => Some(ModelKind::Mdp),
        KindRequest::Determinized => Some(ModelKind::Dtmc),
        KindRequest::Dtmc => {
            let elig = spec.dtmc_eligibility();
            if !elig.eligible {
                return Err(BuildError::NotEligible { clashes: elig.clashes }.into());
            }
            Some(ModelKind::Dtmc)
        }
    };
    let doc = emit(&spec, &EmitOptions { kind }).map_err(|e| CliError::User(e.to_string()))?;
    let text = doc.to_string();
    let queries = parse_queries(texts)?;
    let mut rendered = Vec::with_capacity(queries.len());
    for q in &queries {
        rendered.push(emit_query(&doc, q, None).map_err(|e| CliError::User(e.to_string()))?);
    }
    let props_path: Option<PathBuf> = match (props, dest) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(d)) if !rendered.is_empty() => Some(d.with_extension("props")),
        _ => None,
    };
    let props_text: String = rendered.iter().map(|r| format!("{r}\n")).collect();
    if let Some(d) = dest {
        write(d, &text)?;
    }
    if let Some(p) = &props_path {
        write(p, &props_text)?;
    }
    out.record(
        "emit",
        json!({
            "file": path.display().to_string(),
            "kind": doc.kind,
            "modules": doc.modules.len(),
            "bytes": text.len(),
            "out": dest.map(|p| p.display().to_string()),
            "props": props_path.as_ref().map(|p| p.display().to_string()),
            "properties": rendered,
            "text": if dest.is_none() { Some(&text) } else { None },
        }),
    )?;
    if out.machine() {
        return Ok(());
    }
    match dest {
        None => {
            out.raw(&text)?;
            if props_path.is_none() && !rendered.is_empty() {
                out.raw("\n")?;
                for r in &rendered {
                    out.raw(&format!("// {r}\n"))?;
                }
            }
        }
        Some(d) => {
            eprintln!("wrote {} ({} modules, {} bytes)", d.display(), doc.modules.len(), text.len());
        }
    }
    if let Some(p) = &props_path {
        eprintln!("wrote {} ({})", p.display(), plural(rendered.len(), "property"));
    }
    Ok(())
}

/// Model view of a program, built as an MDP so that every candidate plan of
/// every event stays visible.
fn model_view(g: &Global, spec: &AgentSpec) -> Result<Arc<ModelView>> {
    let a = build(spec, &build_options(g, KindRequest::Auto, true))?;
    let index = a.index.expect("index was requested");
    Ok(Arc::new(ModelView::new(spec, a.model, index)))
}

fn cmd_simulate(
    g: &Global,
    path: &Path,
    cycles: u64,
    policy: Policy,
    objective: Option<(&str, Direction)>,
    future: lisa::runtime::Future,
    out: &mut Out,
) -> Result<()> {
    let spec = load_program(path, out)?;
    let opts = check_options(g);
    let needs_model = policy == Policy::Verified || !spec.runtime.skills.is_empty();
    let view = if needs_model { Some(model_view(g, &spec)?) } else { None };
    let mut counters = None;
    let selector: Box<dyn PlanSelector> = match policy {
        Policy::First => Box::new(FirstDeclared),
        Policy::Random => Box::new(UniformRandom::new(g.seed ^ 0x5eed)),
        Policy::Verified => {
            let view = view.clone().expect("model built for verified policy");
            let mut sel = VerifiedSelector::from_spec(&spec, view.clone(), future, opts);
            if let Some((text, direction)) = objective {
                let objective = parse_query(text).map_err(|e| CliError::User(format!("objective `{text}`: {e}")))?;
                sel = VerifiedSelector::new(
                    view,
                    vec![(None, SelectorConfig { objective, direction, future })],
                    opts,
                );
            } else if spec.runtime.selectors.is_empty() {
                return Err(CliError::User(
                    "--policy verified needs a `select` declaration in the program or --objective".into(),
                ));
            }
            let shared = Shared::new(sel);
            counters = Some(shared.clone());
            Box::new(shared)
        }
    };
    let mut engine = Engine::new(&spec, g.seed, selector).map_err(|e| CliError::User(e.to_string()))?;
    if !spec.runtime.skills.is_empty() {
        let view = view.clone().expect("model built for skills");
        let mut skill = VerificationSkill::from_spec(&spec);
        skill.future = future;
        engine.add_hook(Box::new(SkillRunner::new(view, skill, opts)));
    }
    let mut total_reward = 0.0;
    for _ in 0..cycles {
        let t = engine.step().map_err(|e| CliError::User(e.to_string()))?;
        total_reward += t.reward;
        out.record("cycle", &t)?;
        out.line(t.to_line())?;
    }
    let (checks, fallbacks) = counters.map_or((0, 0), |c| c.counts());
    out.record(
        "simulation",
        json!({
            "file": path.display().to_string(),
            "cycles": cycles,
            "seed": g.seed,
            "policy": engine.selector_name(),
            "total_reward": total_reward,
            "checks": checks,
            "fallbacks": fallbacks,
        }),
    )?;
    if !out.machine() {
        eprintln!(
            "{} with policy {}, seed {}, total reward {total_reward}",
            plural(cycles as usize, "cycle"),
            engine.selector_name(),
            g.seed
        );
        if policy == Policy::Verified {
            eprintln!("{}, {}", plural(checks, "selection check"), plural(fallbacks, "fallback"));
        }
    }
    Ok(())
}

/// Shares a [`VerifiedSelector`] with the caller so its counters can be read
/// after the engine, which owns the selector box, is done.
#[derive(Clone)]
struct Shared(std::rc::Rc<std::cell::RefCell<VerifiedSelector>>);

impl Shared {
    fn new(sel: VerifiedSelector) -> Self {
        Shared(std::rc::Rc::new(std::cell::RefCell::new(sel)))
    }

    fn counts(&self) -> (usize, usize) {
        let s = self.0.borrow();
        (s.checks, s.fallbacks)
    }
}

impl PlanSelector for Shared {
    fn name(&self) -> &str {
        "verified"
    }

    fn select(&mut self, ctx: &lisa::reasoner::SelectionContext<'_>) -> usize {
        self.0.borrow_mut().select(ctx)
    }
}

struct SelectArgs<'a> {
    state: &'a str,
    objective: Option<&'a str>,
    direction: Direction,
    future: lisa::runtime::Future,
    plans: &'a [usize],
}

/// Plans that label some but not all choices of `state`: those the
/// selection at this state actually decides between.
fn contending_plans(model: &ProbModel, state: usize) -> Vec<PlanId> {
    let choices: Vec<&[u16]> = model.choices(state).map(|c| model.choice_plans(c)).collect();
    let mut all: Vec<u16> = choices.iter().flat_map(|c| c.iter().copied()).collect();
    all.sort_unstable();
    all.dedup();
    all.into_iter()
        .filter(|p| !choices.iter().all(|c| c.contains(p)))
        .map(PlanId)
        .collect()
}

fn cmd_select(g: &Global, path: &Path, args: &SelectArgs<'_>, out: &mut Out) -> Result<()> {
    let loaded = load_model(g, path, KindRequest::Auto, out)?;
    let model = &loaded.model;
    let state = resolve_state(model, args.state)?;
    let (objective, direction) = match args.objective {
        Some(text) => (
            parse_query(text).map_err(|e| CliError::User(format!("objective `{text}`: {e}")))?,
            args.direction,
        ),
        None => {
            let decl = loaded.spec.as_ref().and_then(|s| s.runtime.selectors.first()).ok_or_else(|| {
                CliError::User("no --objective given and the input declares no `select` objective".into())
            })?;
            (decl.objective.clone(), decl.direction)
        }
    };
    let candidates: Vec<PlanId> = if args.plans.is_empty() {
        contending_plans(model, state)
    } else {
        let mut c = Vec::with_capacity(args.plans.len());
        for &n in args.plans {
            if n == 0 {
                return Err(CliError::User("plan numbers start at 1".into()));
            }
            c.push(PlanId((n - 1) as u16));
        }
        c.sort();
        c.dedup();
        c
    };
    if candidates.is_empty() {
        return Err(CliError::User(format!("no plans contend for selection at state #{state}")));
    }
    let cfg = SelectorConfig {
        objective,
        direction,
        future: args.future,
    };
    let start = Instant::now();
    let verdict = verified_select(model, state, &candidates, &cfg, &check_options(g))?;
    let elapsed = start.elapsed();
    let scores: Vec<_> = verdict
        .scores
        .iter()
        .map(|(p, v)| json!({"plan": p.to_string(), "value": v}))
        .collect();
    out.record(
        "select",
        json!({
            "state": state,
            "objective": cfg.objective.to_string(),
            "direction": match direction { Direction::Maximize => "maximize", Direction::Minimize => "minimize" },
            "candidates": candidates.iter().map(PlanId::to_string).collect::<Vec<_>>(),
            "selected": verdict.plan.to_string(),
            "scores": scores,
            "seconds": elapsed.as_secs_f64(),
        }),
    )?;
    out.line(format!("state #{state}: {} selected", verdict.plan))?;
    if verdict.scores.is_empty() {
        out.line("  single candidate, no check needed")?;
    }
    for (p, v) in &verdict.scores {
        let mark = if *p == verdict.plan { "*" } else { " " };
        out.line(format!("{mark} {p}  {v}"))?;
    }
    Ok(())
}
