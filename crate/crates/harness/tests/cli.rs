use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use col_core::imitation::chain_instance;
use col_core::ColProblem;
use col_lab::{ExperimentConfig, Instance, RoundsTable};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_col-lab"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn col_lab(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn col-lab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn single_round_run_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q0");
    let q0 = config("q0.toml");
    let o = col_lab(&["run", "--config", q0.to_str().unwrap(), "--rounds", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("rounds_seed1.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("round,loss,dyn_regret,static_regret,delta_n,thm2_bound,cor1_bound,residual\n"));
    let table = RoundsTable::read(&out.join("rounds_seed1.csv")).unwrap();
    assert_eq!(table.round, vec![1]);
    assert!(out.join("summary.csv").exists() && out.join("mean_rounds.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("q1_noisy.toml");
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}"));
        let o = col_lab(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--rounds",
            "300",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        files.push(fs::read(out.join("rounds_seed7.csv")).unwrap());
        files.push(fs::read(out.join("summary.csv")).unwrap());
    }
    assert_eq!(files[0], files[2]);
    assert_eq!(files[1], files[3]);
}

#[test]
fn solve_eq_prints_known_equilibria() {
    let q1 = col_lab(&["solve-eq", "--config", config("q1.toml").to_str().unwrap()]);
    assert!(q1.status.success());
    let text = stdout(&q1);
    let line = text.lines().find(|l| l.starts_with("x_star")).unwrap();
    let values: Vec<f64> = line
        .trim_start_matches("x_star = [")
        .trim_end_matches(']')
        .split(',')
        .map(|v| v.trim().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 2);
    assert!(values.iter().all(|v| (v - 0.4).abs() < 1e-8), "{line}");
    assert!(text.contains("ep_is_solution = true"), "{text}");

    let self_loop = col_lab(&["solve-eq", "--config", config("self_loop.toml").to_str().unwrap()]);
    assert!(self_loop.status.success());
    let text = stdout(&self_loop);
    assert!(text.contains("x_star = [0.8"), "{text}");
}

#[test]
fn chain_config_matches_builtin_instance() {
    let cfg = ExperimentConfig::load(&config("chain.toml"), &[]).unwrap();
    let from_file = Instance::build(&cfg).unwrap();
    let builtin = chain_instance().unwrap();
    let (a, b) = (from_file.problem().constants(), builtin.constants());
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.smoothness, b.smoothness);
    assert!((a.beta - b.beta).abs() <= 1e-12 * b.beta.max(1.0), "{} vs {}", a.beta, b.beta);
    let pi = vec![0.3, 0.7, 0.6, 0.4, 0.9, 0.1];
    assert_eq!(from_file.problem().operator(&pi), builtin.operator(&pi));
}

#[test]
fn sweep_writes_grid_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = col_lab(&[
        "sweep",
        "--config",
        config("q1_noisy.toml").to_str().unwrap(),
        "--rounds",
        "100",
        "--override",
        "run.seeds=[1, 2]",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.starts_with("point,eta,sigma,"));
    assert_eq!(text.lines().count(), 1 + 4 * 2);
}

#[test]
fn verify_exit_codes() {
    let ok = col_lab(&["verify", "geometry"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).lines().all(|l| !l.starts_with("FAIL")));

    let faulty = col_lab(&["verify", "regret", "--fault-inject", "delta"]);
    assert_eq!(faulty.status.code(), Some(1));
    assert!(stdout(&faulty).contains("FAIL"));

    assert_eq!(col_lab(&["verify", "nonsense"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    assert_eq!(col_lab(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));

    let unknown_key = write(dir.path(), "bad.toml", "[problem]\nkind = \"quadratic\"\ncolour = 3\n[run]\nrounds = 5\nseeds = [1]\n");
    assert_eq!(col_lab(&["run", "--config", unknown_key.to_str().unwrap()]).status.code(), Some(2));

    let no_mdp = write(dir.path(), "il.toml", "[problem]\nkind = \"imitation\"\nmdp = \"nowhere.mdp\"\n[run]\nrounds = 5\nseeds = [1]\n");
    assert_eq!(col_lab(&["solve-eq", "--config", no_mdp.to_str().unwrap()]).status.code(), Some(2));

    let q0 = config("q0.toml");
    let zero_rounds = col_lab(&["run", "--config", q0.to_str().unwrap(), "--rounds", "0"]);
    assert_eq!(zero_rounds.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "overflow.toml",
        "[problem]\nkind = \"quadratic\"\nalpha = 1.0\na_scale = 0.5\nset = { kind = \"cube\", dimension = 2 }\n\
         [algorithm]\nname = \"ogd\"\nschedule = \"constant\"\neta = 1e300\n\
         [oracle]\nmode = \"stochastic\"\nsigma = 1e300\n\
         [run]\nrounds = 5\nseeds = [1]\n",
    );
    let out = dir.path().join("o");
    let o = col_lab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
