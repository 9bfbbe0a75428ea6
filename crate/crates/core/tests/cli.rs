use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--synthetic", "d=8,N=200", "--workers", "3", "--memory", "4"];

fn ldqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldqn")).args(args).env_remove("LDQN_OUTPUT_DIR").output().unwrap()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    if !extra.contains(&"--max-updates") {
        args.extend_from_slice(&["--max-updates", "120"]);
    }
    ldqn(&args)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_trace_report_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(tmp.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = std::fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "t,epoch,virtual_time,worker_id,suboptimality,grad_norm,dist_to_opt");
    assert_eq!(lines.count(), 121);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["solver"], "ldqn");
    assert_eq!(report["updates"], 120);
    assert!(tmp.path().join("config.txt").exists());
}

#[test]
fn repeated_runs_are_identical_and_config_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run_into(&a, &["--seed", "3"]).status.success());
    assert!(run_into(&b, &["--seed", "3"]).status.success());
    let read = |p: &Path, f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read(&a, "trace.csv"), read(&b, "trace.csv"));
    assert_eq!(read(&a, "report.json"), read(&b, "report.json"));

    let config = a.join("config.txt");
    let out = ldqn(&["run", "--config", config.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read(&a, "trace.csv"), read(&c, "trace.csv"));
}

#[test]
fn environment_overrides_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let flag_dir = tmp.path().join("flag");
    let env_dir = tmp.path().join("env");
    let mut args = vec!["run", "--out", flag_dir.to_str().unwrap(), "--max-updates", "50"];
    args.extend_from_slice(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_ldqn")).args(&args).env("LDQN_OUTPUT_DIR", &env_dir).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(env_dir.join("trace.csv").exists());
    assert!(!flag_dir.exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    for extra in [&["--workers", "0"][..], &["--eta", "-1"], &["--delay", "sometimes"], &["--set", "bogus=1"]] {
        let out = run_into(tmp.path(), extra);
        assert_eq!(out.status.code(), Some(2), "{extra:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error: "));
    }
    let out = ldqn(&["run", "--solver", "newton"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dense_baseline_refuses_large_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ldqn(&[
        "run", "--solver", "daveqn", "--synthetic", "d=600,N=50", "--max-updates", "5", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("memory cap"), "{}", stderr(&out));
}

#[test]
fn data_errors_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.svm");
    let out = ldqn(&["run", "--data", missing.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let bad = tmp.path().join("bad.svm");
    std::fs::write(&bad, "+1 1:0.5\n-1 0:2\n").unwrap();
    let out = ldqn(&["run", "--data", bad.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn libsvm_input_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("train.svm");
    let mut text = String::new();
    for k in 0..60 {
        let label = if k % 3 == 0 { "-1" } else { "+1" };
        text.push_str(&format!("{label} 1:{} 2:{} 4:{}\n", k % 7, (k * 5) % 11, k % 2));
    }
    std::fs::write(&data, text).unwrap();
    let out = ldqn(&[
        "run", "--data", data.to_str().unwrap(), "--workers", "2", "--max-updates", "40", "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn compare_aligns_solvers() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_into(&a, &["--subopt-tol", "1e-6", "--max-updates", "5000"]).status.success());
    assert!(run_into(&b, &["--solver", "gd", "--max-updates", "300"]).status.success());
    let spec_a = format!("ldqn={}", a.join("trace.csv").display());
    let spec_b = format!("gd={}", b.join("trace.csv").display());
    let cmp_dir = tmp.path().join("cmp");
    let out = ldqn(&["compare", "--tol", "1e-3", "--out", cmp_dir.to_str().unwrap(), &spec_a, &spec_b]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("ldqn") && summary.contains("gd"), "{summary}");
    assert!(cmp_dir.join("epoch.csv").exists() && cmp_dir.join("time.csv").exists());

    let missing = format!("x={}", tmp.path().join("nope.csv").display());
    assert_eq!(ldqn(&["compare", &spec_a, &missing]).status.code(), Some(3));
}

#[test]
fn numerical_failures_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(tmp.path(), &["--solver", "gd", "--set", "gd_step=1e6", "--max-updates", "3000"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
}
