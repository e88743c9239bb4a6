use std::process::{Command, Output};

fn sprb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sprb")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_sprb_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = sprb(&[
        "simulate", "--algo", "sprb", "--family", "linear", "--beta", "2", "--theta", "0.3", "--sigma", "1",
        "--stages", "5", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("algorithm,sample_index,estimate,abs_error\n"));
    // Header, four sampled stage points and the unsampled estimate.
    assert_eq!(text.lines().count(), 1 + 5);
}

#[test]
fn simulate_rm_uses_budget_as_run_length() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rm.csv");
    let o = sprb(&["simulate", "--algo", "rm", "--alpha", "1", "--budget", "500", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("rm,"));
    assert!(stdout(&o).trim_end().ends_with(",500"));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 501);
}

#[test]
fn simulate_without_out_is_a_usage_error() {
    let o = sprb(&["simulate", "--algo", "sprb"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn gamma_with_linear_family_is_rejected() {
    let o = sprb(&["simulate", "--family", "linear", "--gamma", "3", "--out", "/tmp/never.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn unknown_flag_and_values_are_usage_errors() {
    assert_eq!(sprb(&["compare", "--bogus", "1"]).status.code(), Some(2));
    assert_eq!(sprb(&["compare", "--family", "quartic"]).status.code(), Some(2));
    assert_eq!(sprb(&["compare", "--algo", "newton"]).status.code(), Some(2));
    assert_eq!(sprb(&["compare", "--delta", "0.7"]).status.code(), Some(2));
    assert_eq!(sprb(&["compare", "--algo", "rm"]).status.code(), Some(2));
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in ["simulate", "compare", "coverage", "stopping", "clt", "schedule"] {
        let o = sprb(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
    assert_eq!(sprb(&["--help"]).status.code(), Some(0));
}

#[test]
fn compare_is_deterministic_given_seed() {
    let args = ["compare", "--family", "jump", "--reps", "20", "--seed", "4", "--algo", "sprb,rm,asa"];
    let a = sprb(&args);
    let b = sprb(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("algorithm,mean_abs_error,std_error,mean_samples\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"family": "jump", "reps": 10, "algo": "sprb,rm", "seed": 3}"#).unwrap();
    let from_file = sprb(&["compare", "--config", cfg.to_str().unwrap()]);
    assert_eq!(from_file.status.code(), Some(0));
    assert_eq!(stdout(&from_file).lines().count(), 3);
    let flags = sprb(&["compare", "--family", "jump", "--reps", "10", "--algo", "sprb,rm", "--seed", "3"]);
    assert_eq!(from_file.stdout, flags.stdout);
    let overridden = sprb(&["compare", "--config", cfg.to_str().unwrap(), "--algo", "sprb"]);
    assert_eq!(stdout(&overridden).lines().count(), 2);

    std::fs::write(&cfg, r#"{"familly": "jump"}"#).unwrap();
    assert_eq!(sprb(&["compare", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn coverage_stopping_and_clt_emit_csv() {
    let o = sprb(&["coverage", "--family", "jump", "--reps", "30", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("algorithm,delta,reps,violations,violation_rate,wilson_upper_bound\n"));

    let o = sprb(&["stopping", "--mu", "0.5,0.2", "--reps", "200"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 3);

    let o = sprb(&["clt", "--mu", "0.2", "--stage", "2", "--reps", "100"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("mu,reps,mean,variance,mean_n\n"));
    assert_eq!(sprb(&["clt", "--reps", "1"]).status.code(), Some(2));
}

#[test]
fn schedule_prints_grid() {
    let o = sprb(&["schedule", "--k-max", "11"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "1,2,4,6,8,11");
    assert_eq!(sprb(&["schedule", "--k-max", "0"]).status.code(), Some(2));
}
