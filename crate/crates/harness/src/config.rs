//! Experiment configuration files.
//!
//! Configs are TOML with four sections (`problem`, `algorithm`, `oracle`,
//! `run`) and an optional `sweep`. Any key can be replaced from the command
//! line with `section.key=value`, where the value is parsed as a TOML value
//! and falls back to a bare string.

use std::fs;
use std::path::{Path, PathBuf};

use col_core::imitation::{IlProblem, MdpSpec};
use col_core::protocol::NoiseModel;
use col_core::synthetic::{Matrix, QuadraticCol};
use col_core::{
    seeded_rng, AlgorithmKind, ColProblem, DecisionSet, FeedbackMode, StepSchedule,
};
use serde::Deserialize;

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub run: RunConfig,
    pub sweep: Option<SweepConfig>,
    /// Directory relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// `quadratic` or `imitation`.
    pub kind: String,
    pub alpha: Option<f64>,
    pub a_scale: Option<f64>,
    pub a_diagonal: Option<Vec<f64>>,
    pub a_rows: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub set: Option<SetConfig>,
    pub mdp: Option<PathBuf>,
    pub floor: Option<f64>,
    pub beta_samples: Option<usize>,
    pub beta_seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetConfig {
    /// `box`, `cube` or `ball`.
    pub kind: String,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub dimension: Option<usize>,
    pub half_width: Option<f64>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default = "default_algorithm")]
    pub name: String,
    /// `default`, `constant` or `inverse-sqrt`.
    #[serde(default = "default_schedule_name")]
    pub schedule: String,
    pub eta: Option<f64>,
}

fn default_algorithm() -> String {
    "ogd".into()
}

fn default_schedule_name() -> String {
    "default".into()
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            name: default_algorithm(),
            schedule: default_schedule_name(),
            eta: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// `deterministic`, `stochastic` or `full-information`.
    #[serde(default = "default_mode")]
    pub mode: String,
    /// `gaussian` or `rollout`; stochastic mode only.
    pub noise: Option<String>,
    pub sigma: Option<f64>,
}

fn default_mode() -> String {
    "deterministic".into()
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            noise: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rounds: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_tol_inner")]
    pub tol_inner: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Starting decision; the center of the decision set when absent.
    pub x1: Option<Vec<f64>>,
}

fn default_tol_inner() -> f64 {
    col_core::regret::DEFAULT_TOL_INNER
}

fn default_out() -> PathBuf {
    PathBuf::from("col-lab-out")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub etas: Vec<f64>,
    #[serde(default)]
    pub sigmas: Vec<f64>,
}

fn config_err(message: impl Into<String>) -> LabError {
    LabError::Config(message.into())
}

/// Parses `KEY=VAL` into a dotted key path and a TOML value.
pub fn parse_override(text: &str) -> LabResult<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {text:?} is not KEY=VAL")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(config_err(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    Ok((path, value))
}

pub fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> LabResult<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override path crosses non-table key {part:?}")))?;
    }
    cursor.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses config text, applies overrides in order and validates.
    pub fn from_text(text: &str, base_dir: &Path, overrides: &[String]) -> LabResult<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        let mut config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> LabResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, &base, overrides)
    }

    pub fn validate(&self) -> LabResult<()> {
        if self.run.rounds == 0 {
            return Err(config_err("run.rounds must be at least 1"));
        }
        if self.run.seeds.is_empty() {
            return Err(config_err("run.seeds must not be empty"));
        }
        if !(self.run.tol_inner > 0.0) {
            return Err(config_err("run.tol_inner must be positive"));
        }
        self.algorithm_kind()?;
        self.feedback_mode()?;
        match self.problem.kind.as_str() {
            "quadratic" => {}
            "imitation" => {
                let path = self.mdp_path()?;
                if !path.is_file() {
                    return Err(config_err(format!("MDP file {} does not exist", path.display())));
                }
            }
            other => return Err(config_err(format!("unknown problem kind {other:?}"))),
        }
        if let Some(eta) = self.algorithm.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(config_err("algorithm.eta must be positive"));
            }
        }
        Ok(())
    }

    pub fn mdp_path(&self) -> LabResult<PathBuf> {
        let rel = self
            .problem
            .mdp
            .as_ref()
            .ok_or_else(|| config_err("imitation problems need problem.mdp"))?;
        Ok(self.base_dir.join(rel))
    }

    pub fn algorithm_kind(&self) -> LabResult<AlgorithmKind> {
        AlgorithmKind::all()
            .into_iter()
            .find(|k| k.name() == self.algorithm.name)
            .ok_or_else(|| config_err(format!("unknown algorithm {:?}", self.algorithm.name)))
    }

    pub fn feedback_mode(&self) -> LabResult<FeedbackMode> {
        match self.oracle.mode.as_str() {
            "deterministic" => Ok(FeedbackMode::DeterministicGradient),
            "full-information" => Ok(FeedbackMode::FullInformation),
            "stochastic" => match self.oracle.noise.as_deref().unwrap_or("gaussian") {
                "gaussian" => {
                    let sigma = self
                        .oracle
                        .sigma
                        .ok_or_else(|| config_err("gaussian noise needs oracle.sigma"))?;
                    if !(sigma.is_finite() && sigma >= 0.0) {
                        return Err(config_err("oracle.sigma must be non-negative"));
                    }
                    Ok(FeedbackMode::StochasticGradient(NoiseModel::Gaussian { sigma }))
                }
                "rollout" => Ok(FeedbackMode::StochasticGradient(NoiseModel::Rollout)),
                other => Err(config_err(format!("unknown noise model {other:?}"))),
            },
            other => Err(config_err(format!("unknown oracle mode {other:?}"))),
        }
    }

    /// Step schedule for `problem`; see [`default_schedule`].
    pub fn schedule(&self, problem: &dyn ColProblem) -> LabResult<StepSchedule> {
        let eta = self.algorithm.eta;
        let need_eta = || eta.ok_or_else(|| config_err("this schedule needs algorithm.eta"));
        let stochastic = matches!(self.feedback_mode()?, FeedbackMode::StochasticGradient(_));
        Ok(match self.algorithm.schedule.as_str() {
            "constant" => StepSchedule::Constant(need_eta()?),
            "inverse-sqrt" => StepSchedule::InverseSqrt(eta.unwrap_or(1.0)),
            "default" => default_schedule(problem, stochastic, eta),
            other => return Err(config_err(format!("unknown schedule {other:?}"))),
        })
    }
}

/// `mu / (L + beta)^2` for exact feedback on strongly monotone problems,
/// `eta / sqrt(n)` (default `eta = 1`) for stochastic feedback and
/// `D / (G sqrt(n))` otherwise. An explicit `eta` under exact feedback gives a
/// constant step.
pub fn default_schedule(problem: &dyn ColProblem, stochastic: bool, eta: Option<f64>) -> StepSchedule {
    let c = problem.constants();
    if stochastic {
        StepSchedule::InverseSqrt(eta.unwrap_or(1.0))
    } else if let Some(eta) = eta {
        StepSchedule::Constant(eta)
    } else if c.strongly_monotone() {
        StepSchedule::Constant(c.mu() / (c.smoothness + c.beta).powi(2))
    } else {
        StepSchedule::InverseSqrt(problem.decision_set().diameter().max(1e-12) / c.grad_bound)
    }
}

/// A constructed problem instance.
#[derive(Debug, Clone)]
pub enum Instance {
    Quadratic(QuadraticCol),
    Imitation(IlProblem),
}

impl Instance {
    pub fn problem(&self) -> &dyn ColProblem {
        match self {
            Instance::Quadratic(q) => q,
            Instance::Imitation(p) => p,
        }
    }

    pub fn build(config: &ExperimentConfig) -> LabResult<Self> {
        let p = &config.problem;
        match p.kind.as_str() {
            "quadratic" => {
                let set = build_set(p.set.as_ref().ok_or_else(|| config_err("quadratic problems need problem.set"))?)?;
                let d = set.dimension();
                let a = match (p.a_scale, &p.a_diagonal, &p.a_rows) {
                    (Some(c), None, None) => Matrix::scaled_identity(d, c),
                    (None, Some(diag), None) => Matrix::diagonal(diag),
                    (None, None, Some(rows)) => Matrix::from_rows(rows)?,
                    _ => return Err(config_err("give exactly one of a_scale, a_diagonal, a_rows")),
                };
                let b = p.b.clone().unwrap_or_else(|| vec![0.0; d]);
                let alpha = p.alpha.unwrap_or(1.0);
                Ok(Instance::Quadratic(QuadraticCol::new(a, b, alpha, set)?))
            }
            "imitation" => {
                let path = config.mdp_path()?;
                let text = fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                let spec: MdpSpec = text.parse()?;
                let floor = p.floor.unwrap_or(0.0);
                let mut problem = IlProblem::uncalibrated(spec.mdp, spec.expert, floor)?;
                let mut rng = seeded_rng(p.beta_seed.unwrap_or(0xbe7a));
                problem.calibrate_beta(p.beta_samples.unwrap_or(col_core::imitation::DEFAULT_BETA_PAIRS), &mut rng);
                Ok(Instance::Imitation(problem))
            }
            other => Err(config_err(format!("unknown problem kind {other:?}"))),
        }
    }
}

fn build_set(s: &SetConfig) -> LabResult<DecisionSet> {
    let missing = |key: &str| config_err(format!("{} set needs `{key}`", s.kind));
    Ok(match s.kind.as_str() {
        "box" => DecisionSet::boxed(
            s.lower.clone().ok_or_else(|| missing("lower"))?,
            s.upper.clone().ok_or_else(|| missing("upper"))?,
        )?,
        "cube" => DecisionSet::cube(
            s.dimension.ok_or_else(|| missing("dimension"))?,
            s.half_width.unwrap_or(1.0),
        )?,
        "ball" => DecisionSet::ball(
            s.center.clone().ok_or_else(|| missing("center"))?,
            s.radius.ok_or_else(|| missing("radius"))?,
        )?,
        other => return Err(config_err(format!("unknown set kind {other:?}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q0: &str = r#"
[problem]
kind = "quadratic"
a_scale = 0.5
b = [0.0, 0.0]
set = { kind = "cube", dimension = 2 }

[run]
rounds = 10
seeds = [1, 2]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_text(Q0, Path::new("."), &[]).unwrap();
        assert_eq!(c.algorithm.name, "ogd");
        assert_eq!(c.run.tol_inner, 1e-9);
        let inst = Instance::build(&c).unwrap();
        let sched = c.schedule(inst.problem()).unwrap();
        assert_eq!(sched, StepSchedule::Constant(0.5 / 2.25));
    }

    #[test]
    fn overrides_replace_and_create_keys() {
        let c = ExperimentConfig::from_text(
            Q0,
            Path::new("."),
            &["run.rounds=3".into(), "algorithm.name=ftl".into(), "oracle.mode = stochastic".into(), "oracle.sigma=0.5".into()],
        )
        .unwrap();
        assert_eq!(c.run.rounds, 3);
        assert_eq!(c.algorithm_kind().unwrap(), AlgorithmKind::FollowTheLeader);
        assert_eq!(
            c.feedback_mode().unwrap(),
            FeedbackMode::StochasticGradient(NoiseModel::Gaussian { sigma: 0.5 })
        );
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["run.rounds=0", "run.seeds=[]", "algorithm.name=sgd", "problem.colour=1", "oracle.mode=stochastic"] {
            let err = ExperimentConfig::from_text(Q0, Path::new("."), &[bad.into()]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
        assert!(parse_override("novalue").is_err());
        let missing = ExperimentConfig::from_text(
            Q0,
            Path::new("."),
            &["problem.kind=imitation".into(), "problem.mdp=nowhere.mdp".into()],
        );
        assert!(matches!(missing, Err(LabError::Config(m)) if m.contains("does not exist")));
    }
}
