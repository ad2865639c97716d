//! Line-oriented text format for built models.
//!
//! ```text
//! lisa-model 1
//! kind dtmc|mdp
//! initial <state>
//! vars <n> <name>...
//! states <N>
//! <n integers per state>
//! choices <M>
//! <src> <k> <plans|-> <steps|-> <reward>
//! transitions <T>
//! <src> <k> <dst> <prob>
//! state-rewards <N|0>
//! <reward per state>
//! end
//! ```
//!
//! Plans are comma-separated zero-based plan indices; steps are
//! `slot:step` pairs. Floats are written with 17 significant digits, which
//! round-trips every `f64`.

use std::fmt::Write as _;

use super::model::{ModelBuilder, ModelKind, ProbModel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ModelFileError {
    pub line: usize,
    pub message: String,
}

/// Source state, plan labels, step labels and reward of one stored choice.
type ChoiceRow = (usize, Vec<u16>, Vec<(u16, u8)>, f64);

pub fn write_model(model: &ProbModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "lisa-model 1");
    let _ = writeln!(out, "kind {}", model.kind);
    let _ = writeln!(out, "initial {}", model.initial);
    let _ = writeln!(out, "vars {} {}", model.vars.len(), model.vars.join(" "));
    let _ = writeln!(out, "states {}", model.num_states());
    for s in 0..model.num_states() {
        let vals: Vec<String> = model.valuation(s).iter().map(i32::to_string).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    let _ = writeln!(out, "choices {}", model.num_choices());
    for s in 0..model.num_states() {
        for (k, c) in model.choices(s).enumerate() {
            let plans = join_or_dash(model.choice_plans(c).iter().map(u16::to_string));
            let steps = join_or_dash(model.choice_steps(c).iter().map(|(a, b)| format!("{a}:{b}")));
            let _ = writeln!(out, "{s} {k} {plans} {steps} {:.16e}", model.choice_reward(c));
        }
    }
    let _ = writeln!(out, "transitions {}", model.num_transitions());
    for s in 0..model.num_states() {
        for (k, c) in model.choices(s).enumerate() {
            for (d, p) in model.transitions(c) {
                let _ = writeln!(out, "{s} {k} {d} {p:.16e}");
            }
        }
    }
    let n_sr = if model.state_reward.is_empty() { 0 } else { model.num_states() };
    let _ = writeln!(out, "state-rewards {n_sr}");
    for r in &model.state_reward {
        let _ = writeln!(out, "{r:.16e}");
    }
    let _ = writeln!(out, "end");
    out
}

fn join_or_dash(items: impl Iterator<Item = String>) -> String {
    let v: Vec<String> = items.collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, ModelFileError> {
        for (i, l) in self.iter.by_ref() {
            self.line = i + 1;
            let t = l.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok(t);
            }
        }
        Err(self.err("unexpected end of file"))
    }

    fn err(&self, message: impl Into<String>) -> ModelFileError {
        ModelFileError {
            line: self.line,
            message: message.into(),
        }
    }

    /// Reads `keyword <rest>` and returns `rest`.
    fn keyword(&mut self, kw: &str) -> Result<&'a str, ModelFileError> {
        let l = self.next()?;
        match l.split_once(char::is_whitespace) {
            Some((k, rest)) if k == kw => Ok(rest.trim()),
            None if l == kw => Ok(""),
            _ => Err(self.err(format!("expected `{kw}`"))),
        }
    }

    fn count(&mut self, kw: &str) -> Result<usize, ModelFileError> {
        let rest = self.keyword(kw)?;
        rest.parse().map_err(|_| self.err(format!("invalid count `{rest}`")))
    }

    fn parse<T: std::str::FromStr>(&self, tok: Option<&str>, what: &str) -> Result<T, ModelFileError> {
        let tok = tok.ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse().map_err(|_| self.err(format!("invalid {what} `{tok}`")))
    }
}

const RESERVE_CAP: usize = 1 << 16;

pub fn read_model(text: &str) -> Result<ProbModel, ModelFileError> {
    let mut r = Lines {
        iter: text.lines().enumerate(),
        line: 0,
    };
    if r.keyword("lisa-model")? != "1" {
        return Err(r.err("unsupported format version"));
    }
    let kind = match r.keyword("kind")? {
        "dtmc" => ModelKind::Dtmc,
        "mdp" => ModelKind::Mdp,
        other => return Err(r.err(format!("unknown model kind `{other}`"))),
    };
    let initial: u32 = {
        let rest = r.keyword("initial")?;
        r.parse(Some(rest), "initial state")?
    };
    let vars: Vec<String> = {
        let rest = r.keyword("vars")?;
        let mut toks = rest.split_whitespace();
        let n: usize = r.parse(toks.next(), "variable count")?;
        let names: Vec<String> = toks.map(str::to_string).collect();
        if names.len() != n {
            return Err(r.err(format!("expected {n} variable names, found {}", names.len())));
        }
        names
    };
    let n_states = r.count("states")?;
    if n_states == 0 {
        return Err(r.err("model has no states"));
    }
    if initial as usize >= n_states {
        return Err(r.err(format!("initial state {initial} out of range")));
    }
    let mut builder = ModelBuilder::new(kind, vars.clone());
    let mut val = Vec::with_capacity(vars.len());
    for _ in 0..n_states {
        let l = r.next()?;
        val.clear();
        for tok in l.split_whitespace() {
            val.push(r.parse::<i32>(Some(tok), "value")?);
        }
        if val.len() != vars.len() {
            return Err(r.err(format!("expected {} values, found {}", vars.len(), val.len())));
        }
        builder.push_valuation(&val);
    }

    let n_choices = r.count("choices")?;
    let mut choices: Vec<ChoiceRow> = Vec::with_capacity(n_choices.min(RESERVE_CAP));
    let mut last = (0usize, None::<usize>);
    for _ in 0..n_choices {
        let l = r.next()?;
        let mut t = l.split_whitespace();
        let src: usize = r.parse(t.next(), "source state")?;
        let k: usize = r.parse(t.next(), "choice number")?;
        let expected = match last {
            (s, Some(prev)) if s == src => prev + 1,
            (s, _) if src < s => return Err(r.err("choices out of order")),
            _ => 0,
        };
        if src >= n_states || k != expected {
            return Err(r.err(format!("unexpected choice {src} {k}")));
        }
        last = (src, Some(k));
        let plans_tok = t.next().ok_or_else(|| r.err("missing plans"))?;
        let mut plans = Vec::new();
        if plans_tok != "-" {
            for p in plans_tok.split(',') {
                plans.push(r.parse::<u16>(Some(p), "plan index")?);
            }
        }
        let steps_tok = t.next().ok_or_else(|| r.err("missing steps"))?;
        let mut steps = Vec::new();
        if steps_tok != "-" {
            for st in steps_tok.split(',') {
                let (a, b) = st.split_once(':').ok_or_else(|| r.err(format!("invalid step `{st}`")))?;
                steps.push((r.parse::<u16>(Some(a), "slot")?, r.parse::<u8>(Some(b), "step")?));
            }
        }
        let reward: f64 = r.parse(t.next(), "choice reward")?;
        if !reward.is_finite() || reward < 0.0 {
            return Err(r.err(format!("invalid choice reward {reward}")));
        }
        if t.next().is_some() {
            return Err(r.err("trailing tokens"));
        }
        choices.push((src, plans, steps, reward));
    }

    let n_trans = r.count("transitions")?;
    let mut per_choice: Vec<Vec<(u32, f64)>> = vec![Vec::new(); choices.len()];
    // Index of the first choice of every state, to map (src, k) to a choice.
    let mut first = vec![usize::MAX; n_states];
    for (i, (s, ..)) in choices.iter().enumerate() {
        if first[*s] == usize::MAX {
            first[*s] = i;
        }
    }
    let mut prev = 0usize;
    for _ in 0..n_trans {
        let l = r.next()?;
        let mut t = l.split_whitespace();
        let src: usize = r.parse(t.next(), "source state")?;
        let k: usize = r.parse(t.next(), "choice number")?;
        let dst: u32 = r.parse(t.next(), "target state")?;
        let p: f64 = r.parse(t.next(), "probability")?;
        if t.next().is_some() {
            return Err(r.err("trailing tokens"));
        }
        if src >= n_states || first[src] == usize::MAX {
            return Err(r.err(format!("transition from state {src} without choices")));
        }
        let c = first[src] + k;
        if c >= choices.len() || choices[c].0 != src {
            return Err(r.err(format!("unknown choice {src} {k}")));
        }
        if c < prev {
            return Err(r.err("transitions out of order"));
        }
        prev = c;
        if dst as usize >= n_states {
            return Err(r.err(format!("target state {dst} out of range")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(r.err(format!("invalid probability {p}")));
        }
        per_choice[c].push((dst, p));
    }

    let n_sr = r.count("state-rewards")?;
    if n_sr != 0 && n_sr != n_states {
        return Err(r.err("state reward count must be 0 or the number of states"));
    }
    let mut state_rewards = Vec::with_capacity(n_sr.min(RESERVE_CAP));
    for _ in 0..n_sr {
        let l = r.next()?;
        let v: f64 = r.parse(Some(l), "state reward")?;
        if !v.is_finite() || v < 0.0 {
            return Err(r.err(format!("invalid state reward {v}")));
        }
        state_rewards.push(v);
    }
    r.keyword("end")?;

    let mut ci = 0;
    let mut choice_rewards = Vec::with_capacity(choices.len());
    for s in 0..n_states {
        while ci < choices.len() && choices[ci].0 == s {
            let (_, plans, steps, reward) = &choices[ci];
            builder.push_choice(plans, steps, &per_choice[ci]);
            choice_rewards.push(*reward);
            ci += 1;
        }
        builder.finish_state();
    }
    let mut model = builder.finish(initial);
    let any_choice_reward = choice_rewards.iter().any(|r| *r != 0.0);
    if !state_rewards.is_empty() || any_choice_reward {
        model.set_rewards(state_rewards, if any_choice_reward { choice_rewards } else { Vec::new() });
    }
    model.validate().map_err(|e| ModelFileError {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ProbModel {
        let mut m = ProbModel::from_labelled_choices(
            ModelKind::Mdp,
            vec!["x".into(), "plan_1".into()],
            vec![vec![0, 0], vec![1, 2], vec![-3, 0]],
            0,
            vec![
                vec![
                    (vec![0], vec![(1, 0.1), (2, 0.9)]),
                    (vec![1, 2], vec![(2, 1.0 / 3.0), (0, 2.0 / 3.0)]),
                ],
                vec![(vec![], vec![(1, 1.0)])],
                vec![(vec![], vec![(2, 1.0)])],
            ],
        );
        m.set_rewards(vec![1.0, 0.0, 0.25], vec![0.0, 2.0, 0.0, 0.0]);
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample();
        let text = write_model(&m);
        let back = read_model(&text).unwrap();
        assert_eq!(write_model(&back), text);
        assert_eq!(back.transitions(1).collect::<Vec<_>>(), m.transitions(1).collect::<Vec<_>>());
        assert_eq!(back.choice_plans(1), &[1, 2]);
        assert_eq!(back.valuation(2), &[-3, 0]);
        assert_eq!(back.choice_reward(1), 2.0);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let good = write_model(&sample());
        let cases = [
            good.replace("lisa-model 1", "lisa-model 2"),
            good.replace("kind mdp", "kind ctmc"),
            good.replace("initial 0", "initial 9"),
            good.replace("end\n", ""),
            good.replacen("1.0000000000000000e0", "1.5000000000000000e0", 1),
            good.replace("states 3", "states 4"),
        ];
        for c in cases {
            assert!(read_model(&c).is_err(), "{c}");
        }
    }
}
