//! Multi-seed experiment execution and summary files.

use std::path::{Path, PathBuf};

use col_core::equilibrium::solve_problem;
use col_core::protocol::estimate_noise_second_moment;
use col_core::regret::{default_window, CertificateCheck};
use col_core::{
    compute_report, run, AlgorithmKind, AlgorithmState, ColError, ColProblem, EquilibriumSolution, FeedbackMode,
    FeedbackOracle, RegretReport, RunLog, StepSchedule,
};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Instance};
use crate::error::{LabError, LabResult};
use crate::output::{csv_bytes, fmt_f64, fmt_opt, rounds_csv, write_atomic};

/// Tolerance for the reference equilibrium used by every certificate.
pub const EQ_TOLERANCE: f64 = 1e-10;
/// Rollouts used to estimate the feedback noise second moment at `x_1`.
pub const NOISE_ROLLOUTS: usize = 1000;
/// Final natural residual under which a run counts as converged.
pub const CONVERGED_RESIDUAL: f64 = 1e-6;
const NOISE_STREAM: u64 = 0x6e6f_6973_6521;

pub const SUMMARY_HEADER: [&str; 14] = [
    "seed",
    "rounds",
    "algorithm",
    "final_loss",
    "final_dyn_regret",
    "final_static_regret",
    "dyn_rate",
    "final_residual",
    "converged",
    "thm2_pass",
    "cor1_pass",
    "noise_second_moment",
    "beta",
    "beta_provenance",
];

pub const MEAN_ROUNDS_HEADER: [&str; 5] = [
    "round",
    "mean_dyn_regret",
    "se_dyn_regret",
    "mean_static_regret",
    "mean_delta_n",
];

/// Everything a seed needs, computed once per experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub instance: Instance,
    pub kind: AlgorithmKind,
    pub schedule: StepSchedule,
    pub mode: FeedbackMode,
    pub x1: Vec<f64>,
    pub x_star: Option<EquilibriumSolution>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> LabResult<Self> {
        let instance = Instance::build(config)?;
        let problem = instance.problem();
        let set = problem.decision_set();
        let x1 = match &config.run.x1 {
            Some(x) if x.len() != set.dimension() => {
                return Err(LabError::Config(format!(
                    "run.x1 has {} entries, the decision set has dimension {}",
                    x.len(),
                    set.dimension()
                )))
            }
            Some(x) if !set.contains(x) => {
                return Err(LabError::Config("run.x1 lies outside the decision set".into()))
            }
            Some(x) => x.clone(),
            None => set.center(),
        };
        let x_star = match solve_problem(problem, EQ_TOLERANCE) {
            Ok(sol) => Some(sol),
            Err(ColError::NonConvergence { residual, .. }) if !problem.constants().strongly_monotone() => {
                warn!("no equilibrium found (residual {residual:e}); equilibrium columns left empty");
                None
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            kind: config.algorithm_kind()?,
            schedule: config.schedule(problem)?,
            mode: config.feedback_mode()?,
            config: config.clone(),
            instance,
            x1,
            x_star,
        })
    }

    pub fn problem(&self) -> &dyn ColProblem {
        self.instance.problem()
    }

    fn schedule_eta(&self) -> Option<f64> {
        Some(match self.schedule {
            StepSchedule::Constant(eta) | StepSchedule::InverseSqrt(eta) => eta,
        })
    }

    pub fn run_seed(&self, seed: u64) -> LabResult<SeedOutcome> {
        let problem = self.problem();
        let mut oracle = FeedbackOracle::new(self.mode, seed);
        if oracle.noise_second_moment().is_none() {
            let mut probe = FeedbackOracle::new(self.mode, seed ^ NOISE_STREAM);
            let sigma2 = estimate_noise_second_moment(problem, &mut probe, &self.x1, NOISE_ROLLOUTS)?;
            oracle.record_noise_second_moment(sigma2);
        }
        let mut state = AlgorithmState::new(self.kind, self.schedule, self.x1.clone())?;
        let log = run(problem, &mut oracle, &mut state, self.config.run.rounds)?;
        let report = compute_report(problem, &log, self.x_star.as_ref(), self.config.run.tol_inner)?;
        let (lo, hi) = default_window(report.rounds);
        let rate = if lo < hi {
            match report.dynamic_rate(lo, hi) {
                Ok(r) => Some(r),
                Err(e) if e.is_numeric() => {
                    info!("seed {seed}: {e}");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let (thm2, cor1) = match &report.equilibrium {
            Some(_) => (Some(report.check_thm2()?), report.check_cor1()?),
            None => (None, None),
        };
        Ok(SeedOutcome {
            seed,
            noise_second_moment: oracle.noise_second_moment(),
            log,
            report,
            rate,
            thm2,
            cor1,
        })
    }

    /// Runs every seed, in parallel up to [`thread_cap`] workers; results keep seed order.
    pub fn run_seeds(&self, seeds: &[u64]) -> LabResult<Vec<SeedOutcome>> {
        let threads = thread_cap().min(seeds.len()).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| self.run_seed(s)).collect())
    }
}

/// Worker cap from `COL_LAB_THREADS`, else the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("COL_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub log: RunLog,
    pub report: RegretReport,
    pub rate: Option<f64>,
    pub thm2: Option<CertificateCheck>,
    pub cor1: Option<CertificateCheck>,
    pub noise_second_moment: Option<f64>,
}

impl SeedOutcome {
    pub fn final_dyn_regret(&self) -> f64 {
        *self.report.dynamic_regret.last().expect("at least one round")
    }

    pub fn final_static_regret(&self) -> Option<f64> {
        self.report.equilibrium.as_ref().and_then(|e| e.static_regret.last().copied())
    }

    pub fn final_residual(&self) -> f64 {
        *self.report.residual.last().expect("at least one round")
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let m = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}

fn flag(passed: bool) -> f64 {
    if passed {
        1.0
    } else {
        0.0
    }
}

pub fn summary_csv(prepared: &Prepared, outcomes: &[SeedOutcome]) -> LabResult<Vec<u8>> {
    let c = prepared.problem().constants();
    let provenance = format!("{:?}", c.beta_provenance).to_lowercase();
    let name = prepared.kind.name().to_owned();
    let rounds = prepared.config.run.rounds.to_string();
    let mut rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.seed.to_string(),
                rounds.clone(),
                name.clone(),
                fmt_f64(*o.report.losses.last().expect("at least one round")),
                fmt_f64(o.final_dyn_regret()),
                fmt_opt(o.final_static_regret()),
                fmt_opt(o.rate),
                fmt_f64(o.final_residual()),
                fmt_f64(flag(o.final_residual() <= CONVERGED_RESIDUAL)),
                fmt_opt(o.thm2.as_ref().map(|t| flag(t.passed))),
                fmt_opt(o.cor1.as_ref().map(|t| flag(t.passed))),
                fmt_opt(o.noise_second_moment),
                fmt_f64(c.beta),
                provenance.clone(),
            ]
        })
        .collect();
    let all = |f: &dyn Fn(&SeedOutcome) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = outcomes.iter().map(f).collect();
        v.and_then(mean)
    };
    rows.push(vec![
        "mean".into(),
        rounds,
        name,
        fmt_opt(all(&|o| o.report.losses.last().copied())),
        fmt_opt(all(&|o| Some(o.final_dyn_regret()))),
        fmt_opt(all(&|o| o.final_static_regret())),
        fmt_opt(all(&|o| o.rate)),
        fmt_opt(all(&|o| Some(o.final_residual()))),
        fmt_opt(all(&|o| Some(flag(o.final_residual() <= CONVERGED_RESIDUAL)))),
        fmt_opt(all(&|o| o.thm2.as_ref().map(|t| flag(t.passed)))),
        fmt_opt(all(&|o| o.cor1.as_ref().map(|t| flag(t.passed)))),
        fmt_opt(all(&|o| o.noise_second_moment)),
        fmt_f64(c.beta),
        provenance,
    ]);
    csv_bytes(&SUMMARY_HEADER, rows)
}

/// Per-round means over seeds, for plotting.
pub fn mean_rounds_csv(outcomes: &[SeedOutcome]) -> LabResult<Vec<u8>> {
    let n = outcomes.first().map_or(0, |o| o.report.rounds);
    let rows = (0..n).map(|i| {
        let dyn_values: Vec<f64> = outcomes.iter().map(|o| o.report.dynamic_regret[i]).collect();
        let (m, se) = mean_and_se(&dyn_values);
        let static_mean = outcomes
            .iter()
            .map(|o| o.report.equilibrium.as_ref().map(|e| e.static_regret[i]))
            .collect::<Option<Vec<f64>>>()
            .and_then(mean);
        let delta_mean = outcomes
            .iter()
            .map(|o| o.report.equilibrium.as_ref().map(|e| e.delta[i]))
            .collect::<Option<Vec<f64>>>()
            .and_then(mean);
        vec![(i + 1).to_string(), fmt_f64(m), fmt_f64(se), fmt_opt(static_mean), fmt_opt(delta_mean)]
    });
    csv_bytes(&MEAN_ROUNDS_HEADER, rows)
}

pub fn rounds_file(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("rounds_seed{seed}.csv"))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub prepared: Prepared,
    pub outcomes: Vec<SeedOutcome>,
    pub files: Vec<PathBuf>,
}

/// Runs every configured seed and writes per-round, summary and mean CSVs into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> LabResult<ExperimentOutput> {
    let prepared = Prepared::new(config)?;
    let outcomes = prepared.run_seeds(&config.run.seeds)?;
    let mut files = Vec::new();
    for o in &outcomes {
        let path = rounds_file(out, o.seed);
        write_atomic(&path, &rounds_csv(&o.report)?)?;
        files.push(path);
    }
    let summary = out.join("summary.csv");
    write_atomic(&summary, &summary_csv(&prepared, &outcomes)?)?;
    files.push(summary);
    let means = out.join("mean_rounds.csv");
    write_atomic(&means, &mean_rounds_csv(&outcomes)?)?;
    files.push(means);
    Ok(ExperimentOutput {
        prepared,
        outcomes,
        files,
    })
}

pub const SWEEP_HEADER: [&str; 7] = [
    "point",
    "eta",
    "sigma",
    "mean_final_dyn_regret",
    "se_final_dyn_regret",
    "mean_dyn_rate",
    "thm2_pass",
];

/// Grid over `sweep.etas` x `sweep.sigmas`. Point `i` is written to
/// `out/point{i}` and `out/sweep.csv` indexes the grid.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> LabResult<Vec<PathBuf>> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| LabError::Config("sweep needs a [sweep] section".into()))?;
    if sweep.etas.is_empty() && sweep.sigmas.is_empty() {
        return Err(LabError::Config("sweep.etas and sweep.sigmas are both empty".into()));
    }
    let etas: Vec<Option<f64>> = if sweep.etas.is_empty() { vec![None] } else { sweep.etas.iter().copied().map(Some).collect() };
    let sigmas: Vec<Option<f64>> =
        if sweep.sigmas.is_empty() { vec![None] } else { sweep.sigmas.iter().copied().map(Some).collect() };
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (point, (eta, sigma)) in etas
        .iter()
        .flat_map(|e| sigmas.iter().map(move |s| (*e, *s)))
        .enumerate()
    {
        let mut c = config.clone();
        if eta.is_some() {
            c.algorithm.eta = eta;
        }
        if let Some(s) = sigma {
            c.oracle.mode = "stochastic".into();
            c.oracle.noise = Some("gaussian".into());
            c.oracle.sigma = Some(s);
        }
        c.validate()?;
        let result = run_experiment(&c, &out.join(format!("point{point}")))?;
        let finals: Vec<f64> = result.outcomes.iter().map(SeedOutcome::final_dyn_regret).collect();
        let (m, se) = mean_and_se(&finals);
        let rate = result.outcomes.iter().map(|o| o.rate).collect::<Option<Vec<f64>>>().and_then(mean);
        let thm2 = result
            .outcomes
            .iter()
            .map(|o| o.thm2.as_ref().map(|t| flag(t.passed)))
            .collect::<Option<Vec<f64>>>()
            .and_then(mean);
        rows.push(vec![
            point.to_string(),
            fmt_opt(eta.or(result.prepared.schedule_eta())),
            fmt_opt(sigma.or(config.oracle.sigma)),
            fmt_f64(m),
            fmt_f64(se),
            fmt_opt(rate),
            fmt_opt(thm2),
        ]);
        files.extend(result.files);
    }
    let index = out.join("sweep.csv");
    write_atomic(&index, &csv_bytes(&SWEEP_HEADER, rows)?)?;
    files.push(index);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_se(&[4.0]), (4.0, 0.0));
    }
}
