//! Plain-text MDP files.
//!
//! ```text
//! # comments run to end of line
//! states 2
//! actions 2
//! horizon 3
//! initial 0.5 0.5            # or: initial uniform
//! transition 0 0  1.0 0.0    # transition <s> <a> P(0|s,a) .. P(S-1|s,a)
//! transition 0 1  0.0 1.0
//! transition 1 0  0.0 1.0
//! transition 1 1  1.0 0.0
//! expert 0  1.0 0.0          # expert <s> pi*(0|s) .. pi*(A-1|s)
//! expert 1  1.0 0.0
//! ```
//!
//! `states`, `actions` and `horizon` must appear before any row that needs
//! them. Every `(s, a)` pair needs exactly one `transition` line and every
//! state exactly one `expert` line.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{ColError, Result};

use super::mdp::TabularMdp;
use super::problem::Policy;

#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    pub mdp: TabularMdp,
    pub expert: Policy,
}

fn parse_err(line: usize, message: impl Into<String>) -> ColError {
    ColError::MdpParse {
        line,
        message: message.into(),
    }
}

fn parse_number<T: FromStr>(token: &str, line: usize, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| parse_err(line, format!("{what}: cannot parse {token:?}")))
}

fn parse_row(tokens: &[&str], expected: usize, line: usize) -> Result<Vec<f64>> {
    if tokens.len() != expected {
        return Err(parse_err(line, format!("expected {expected} probabilities, found {}", tokens.len())));
    }
    tokens.iter().map(|t| parse_number(t, line, "probability")).collect()
}

impl FromStr for MdpSpec {
    type Err = ColError;

    fn from_str(text: &str) -> Result<Self> {
        let mut states: Option<usize> = None;
        let mut actions: Option<usize> = None;
        let mut horizon: Option<usize> = None;
        let mut initial: Option<Vec<f64>> = None;
        let mut transitions: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
        let mut expert: Vec<Option<Vec<f64>>> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            let need = |v: Option<usize>, key: &str| v.ok_or_else(|| parse_err(line, format!("`{key}` must be declared first")));
            match tokens[0] {
                "states" | "actions" | "horizon" => {
                    if tokens.len() != 2 {
                        return Err(parse_err(line, format!("`{}` takes one integer", tokens[0])));
                    }
                    let value: usize = parse_number(tokens[1], line, tokens[0])?;
                    let slot = match tokens[0] {
                        "states" => &mut states,
                        "actions" => &mut actions,
                        _ => &mut horizon,
                    };
                    if slot.replace(value).is_some() {
                        return Err(parse_err(line, format!("duplicate `{}`", tokens[0])));
                    }
                    if let (Some(s), Some(a)) = (states, actions) {
                        if transitions.is_empty() {
                            transitions = vec![vec![None; a]; s];
                            expert = vec![None; s];
                        }
                    }
                }
                "initial" => {
                    let s = need(states, "states")?;
                    if initial.is_some() {
                        return Err(parse_err(line, "duplicate `initial`"));
                    }
                    initial = Some(if tokens.len() == 2 && tokens[1] == "uniform" {
                        vec![1.0 / s as f64; s]
                    } else {
                        parse_row(&tokens[1..], s, line)?
                    });
                }
                "transition" => {
                    let s_count = need(states, "states")?;
                    let a_count = need(actions, "actions")?;
                    if tokens.len() < 3 {
                        return Err(parse_err(line, "transition needs <s> <a> and a row"));
                    }
                    let s: usize = parse_number(tokens[1], line, "state")?;
                    let a: usize = parse_number(tokens[2], line, "action")?;
                    if s >= s_count || a >= a_count {
                        return Err(parse_err(line, format!("index ({s}, {a}) out of range")));
                    }
                    let row = parse_row(&tokens[3..], s_count, line)?;
                    if transitions[s][a].replace(row).is_some() {
                        return Err(parse_err(line, format!("duplicate transition ({s}, {a})")));
                    }
                }
                "expert" => {
                    let s_count = need(states, "states")?;
                    let a_count = need(actions, "actions")?;
                    if tokens.len() < 2 {
                        return Err(parse_err(line, "expert needs <s> and a row"));
                    }
                    let s: usize = parse_number(tokens[1], line, "state")?;
                    if s >= s_count {
                        return Err(parse_err(line, format!("state {s} out of range")));
                    }
                    let row = parse_row(&tokens[2..], a_count, line)?;
                    if expert[s].replace(row).is_some() {
                        return Err(parse_err(line, format!("duplicate expert row {s}")));
                    }
                }
                other => return Err(parse_err(line, format!("unknown keyword `{other}`"))),
            }
        }

        let end = text.lines().count();
        let states = states.ok_or_else(|| parse_err(end, "missing `states`"))?;
        let actions = actions.ok_or_else(|| parse_err(end, "missing `actions`"))?;
        let horizon = horizon.ok_or_else(|| parse_err(end, "missing `horizon`"))?;
        let initial = initial.ok_or_else(|| parse_err(end, "missing `initial`"))?;
        let transitions = transitions
            .into_iter()
            .enumerate()
            .map(|(s, rows)| {
                rows.into_iter()
                    .enumerate()
                    .map(|(a, r)| r.ok_or_else(|| parse_err(end, format!("missing transition ({s}, {a})"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let expert_table = expert
            .into_iter()
            .enumerate()
            .map(|(s, r)| r.ok_or_else(|| parse_err(end, format!("missing expert row {s}"))))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let mdp = TabularMdp::new(horizon, initial, transitions)?;
        let expert = Policy::new(states, actions, expert_table)?;
        Ok(MdpSpec { mdp, expert })
    }
}

impl MdpSpec {
    /// Serializes in the grammar accepted by `from_str`, with round-trip float formatting.
    pub fn to_text(&self) -> String {
        let m = &self.mdp;
        let join = |row: &[f64]| row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let _ = writeln!(out, "states {}", m.num_states());
        let _ = writeln!(out, "actions {}", m.num_actions());
        let _ = writeln!(out, "horizon {}", m.horizon());
        let _ = writeln!(out, "initial {}", join(m.initial()));
        for s in 0..m.num_states() {
            for a in 0..m.num_actions() {
                let _ = writeln!(out, "transition {s} {a} {}", join(m.transition(s, a)));
            }
        }
        for s in 0..m.num_states() {
            let _ = writeln!(out, "expert {s} {}", join(self.expert.row(s)));
        }
        out
    }
}
