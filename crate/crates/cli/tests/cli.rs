use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn horizon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horizon"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn horizon")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

// Small, fast settings shared by the pipeline tests.
const SMALL: [&str; 6] = ["--set", "num_trajectories=300", "--set", "eval.n_pairs=100", "--set", "maze=s_maze"];

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&horizon(dir.path(), &["--help"])), 0);
    assert_eq!(code(&horizon(dir.path(), &["--version"])), 0);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&horizon(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&horizon(dir.path(), &["estimate", "--set", "gamma=2"])), 1);
    assert_eq!(code(&horizon(dir.path(), &["estimate", "--set", "no_such_key=1"])), 1);
    assert_eq!(code(&horizon(dir.path(), &["generate", "--set", "maze=nowhere.txt"])), 1);
    assert_eq!(code(&horizon(dir.path(), &["invariance", "--set", "planner=none"])), 1);
    fs::write(dir.path().join("bad.toml"), "seed = \"zero\"\n").unwrap();
    assert_eq!(code(&horizon(dir.path(), &["report", "-c", "bad.toml"])), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = horizon(dir.path(), &["plot-data", "missing.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    fs::write(dir.path().join("p.csv"), "state_id,prob\n0,1.0\n").unwrap();
    let out = horizon(dir.path(), &["transport", "--from", "p.csv", "--to", "p.csv", "--cost", "missing.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn uncertified_transport_cost_is_rejected_as_input() {
    let dir = tempfile::tempdir().unwrap();
    // A raw hitting-time table is not a quasimetric, so it cannot be a transport cost.
    let mut args = vec!["estimate", "-o", "raw"];
    args.extend(SMALL);
    assert_eq!(code(&horizon(dir.path(), &args)), 0);
    fs::write(dir.path().join("p.csv"), "state_id,prob\n0,1.0\n").unwrap();
    let out = horizon(dir.path(), &["transport", "--from", "p.csv", "--to", "p.csv", "--cost", "raw/distances.csv"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("triangle inequality"));
}

#[test]
fn stepwise_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["generate", "estimate", "project", "evaluate"] {
        let mut args = vec![cmd, "-o", "run"];
        args.extend(SMALL);
        let out = horizon(dir.path(), &args);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = dir.path().join("run");
    for file in [
        "config.resolved.toml",
        "dataset.csv",
        "dataset.json",
        "distances.csv",
        "distances.json",
        "quasimetric.csv",
        "quasimetric.json",
        "curve.csv",
        "outcomes.csv",
        "evaluation.json",
    ] {
        assert!(run.join(file).is_file(), "{file} missing");
    }
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("quasimetric.json")).unwrap()).unwrap();
    assert_eq!(sidecar["certified"], true);

    // The resolved config reproduces the run.
    let out = horizon(dir.path(), &["evaluate", "-c", "run/config.resolved.toml", "-o", "again"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(run.join("curve.csv")).unwrap(),
        fs::read(dir.path().join("again/curve.csv")).unwrap()
    );

    // Projecting an external table and evaluating on it.
    let out = horizon(dir.path(), &["project", "--input", "run/distances.csv", "-o", "ext", "--set", "maze=s_maze"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(run.join("quasimetric.csv")).unwrap(),
        fs::read(dir.path().join("ext/quasimetric.csv")).unwrap()
    );
    let mut args = vec!["evaluate", "--table", "ext/quasimetric.csv", "-o", "ext"];
    args.extend(SMALL);
    assert_eq!(code(&horizon(dir.path(), &args)), 0);
}

#[test]
fn random_policy_is_planning_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let out = horizon(dir.path(), &["invariance", "-o", "inv", "--set", "policy=random", "--set", "eval.n_pairs=300"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(s["success_direct"].as_f64().unwrap() > 0.0);
    assert_eq!(s["ratio"], 1.0);
    assert!(dir.path().join("inv/invariance.json").is_file());
}

#[test]
fn adversarial_policy_fails_beyond_its_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = horizon(
        dir.path(),
        &["evaluate", "-o", "adv", "--set", "policy=adversarial", "--set", "horizon=5", "--set", "eval.n_pairs=2000"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("adv/curve.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let (upper, rate) = (
        headers.iter().position(|h| h == "bin_upper").unwrap(),
        headers.iter().position(|h| h == "success_rate").unwrap(),
    );
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[upper].parse().unwrap(), r[rate].parse().unwrap())
        })
        .collect();
    assert!(rows.iter().filter(|r| r.0 <= 5.0).all(|r| r.1 == 1.0), "{rows:?}");
    assert!(rows.iter().any(|r| r.0 == 6.0 && r.1 < 1.0), "{rows:?}");
}

#[test]
fn report_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["report", "-o", "rep"];
    args.extend(SMALL);
    let out = horizon(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = dir.path().join("rep");
    for file in ["report.csv", "scatter.csv", "summary.json", "quasimetric.csv"] {
        assert!(rep.join(file).is_file(), "{file} missing");
    }
    let report = fs::read_to_string(rep.join("report.csv")).unwrap();
    assert!(report.starts_with("method,c,eta_c,eta_aggregate,reach_wc,invariance_ratio"));
    assert!(report.lines().any(|l| l.starts_with("random,")));

    let out = horizon(dir.path(), &["plot-data", "rep/scatter.csv"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with('#'));
    assert!(lines.all(|l| !l.contains(',')));
}

#[test]
fn bellman_error_grows_with_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = horizon(dir.path(), &["bellman", "-o", "bell", "--set", "bellman.num_trajectories=500"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("bell/bellman.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "error").unwrap();
    let errors: Vec<f64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(errors.len(), 5);
    assert!(errors[0] < 1e-6);
    assert!(errors.windows(2).all(|w| w[0] < w[1]), "{errors:?}");
}

#[test]
fn transport_between_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["project", "-o", "q", "--set", "estimator=short_pairs"];
    args.extend(SMALL);
    assert_eq!(code(&horizon(dir.path(), &args)), 0);
    fs::write(dir.path().join("p.csv"), "state_id,prob\n0,0.5\n1,0.5\n").unwrap();
    fs::write(dir.path().join("q.csv"), "state_id,prob\n3,1.0\n").unwrap();
    let out = horizon(
        dir.path(),
        &["transport", "--from", "p.csv", "--to", "q.csv", "--cost", "q/quasimetric.csv", "--output", "t.json"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    // s_maze's first row is open: states 0 and 1 are 3 and 2 steps from state 3.
    assert_eq!(t["value"], 2.5);
}
