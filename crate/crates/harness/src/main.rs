use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use col_lab::verify::{all_passed, parse_scope};
use col_lab::{run_experiment, run_sweep, solve_eq, verify, ExperimentConfig, Fault, LabResult};

#[derive(Parser)]
#[command(name = "col-lab", version, about = "Continuous online learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment over every configured seed and write CSVs.
    Run(ConfigArgs),
    /// Run the invariant suites of one module or `all`.
    Verify {
        #[arg(default_value = "all")]
        scope: String,
        /// Corrupt an input on purpose (`delta` or `gradient`).
        #[arg(long, default_value = "none")]
        fault_inject: String,
    },
    /// Solve the configured problem's equilibrium and print it.
    SolveEq(ConfigArgs),
    /// Run the experiment over the `[sweep]` grid of step sizes and noise levels.
    Sweep(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    /// `section.key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VAL")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> LabResult<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seeds=[{seed}]"));
        }
        if let Some(rounds) = self.rounds {
            overrides.push(format!("run.rounds={rounds}"));
        }
        ExperimentConfig::load(&self.config, &overrides)
    }

    fn out_dir(&self, config: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| config.run.out.clone())
    }
}

fn execute(command: Command) -> LabResult<bool> {
    match command {
        Command::Run(args) => {
            let config = args.load()?;
            let out = args.out_dir(&config);
            let result = run_experiment(&config, &out)?;
            for o in &result.outcomes {
                println!(
                    "seed {}: dyn_regret {} static_regret {} thm2 {}",
                    o.seed,
                    col_lab::output::fmt_f64(o.final_dyn_regret()),
                    o.final_static_regret().map_or("-".into(), col_lab::output::fmt_f64),
                    o.thm2.as_ref().map_or("-", |c| if c.passed { "pass" } else { "FAIL" }),
                );
            }
            for f in &result.files {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
        Command::Verify { scope, fault_inject } => {
            let modules = parse_scope(&scope)?;
            let fault: Fault = fault_inject.parse()?;
            let start = Instant::now();
            let outcomes = verify(&modules, fault);
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!(
                "{} checks, {failed} failed, {:.1}s",
                outcomes.len(),
                start.elapsed().as_secs_f64()
            );
            Ok(all_passed(&outcomes))
        }
        Command::SolveEq(args) => {
            let config = args.load()?;
            print!("{}", solve_eq(&config)?.render());
            Ok(true)
        }
        Command::Sweep(args) => {
            let config = args.load()?;
            let out = args.out_dir(&config);
            for f in run_sweep(&config, &out)? {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
