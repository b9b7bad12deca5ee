use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_implicit-spde"));
    cmd.env_remove("SPDE_OUTPUT_DIR");
    cmd
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, json).unwrap();
    path
}

fn run(dir: &TempDir, json: &str, extra: &[&str]) -> Output {
    let config = write_config(dir.path(), json);
    let out = dir.path().join("out");
    bin().arg("--config").arg(&config).arg("--output").arg(&out).args(extra).output().unwrap()
}

fn read(dir: &TempDir, name: &str) -> String {
    std::fs::read_to_string(dir.path().join("out").join(name)).unwrap()
}

fn body(csv: &str) -> String {
    csv.lines().filter(|l| !l.starts_with("# timestamp=")).collect::<Vec<_>>().join("\n")
}

const SMALL_STUDY: &str = r#""study": { "levels": [4, 8, 16], "m_fine": 64, "n_paths": 4, "base_seed": 5 }"#;

#[test]
fn check_passes_on_additive_heat() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, r#"{ "command": "check", "problem": { "gallery": "heat-additive", "n": 16 }, "probes": { "trials": 200 } }"#, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let reports: serde_json::Value = serde_json::from_str(&read(&dir, "probe_report.json")).unwrap();
    assert!(reports.as_array().unwrap().iter().any(|r| r["condition"] == "A1"));
    assert!(read(&dir, "probe_report.txt").contains("all probes passed"));
}

#[test]
fn check_flags_lost_parabolicity() {
    let dir = TempDir::new().unwrap();
    let json = format!(
        r#"{{ "command": "check", "problem": {{ "gallery": "quasilinear", "n": 16, "a": 1.0, "b": {} }} }}"#,
        std::f64::consts::SQRT_2
    );
    let out = run(&dir, &json, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("A1"));
    assert!(read(&dir, "probe_report.txt").contains("failed: A1"));
}

#[test]
fn check_flags_anti_monotone_drift() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, r#"{ "command": "check", "problem": { "gallery": "anti-monotone", "n": 16 }, "probes": { "trials": 100 } }"#, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("C1"));
}

#[test]
fn malformed_and_unknown_configs_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, "{ \"command\": \"check\",\n  \"problem\": { \"gallery\": \"heat\" ", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = run(&dir, r#"{ "command": "check", "problem": { "gallery": "heat" }, "colour": 1 }"#, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    let out = run(&dir, r#"{ "command": "check", "problem": { "gallery": "heat", "m": 3 } }"#, &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&dir, r#"{ "command": "fly", "problem": { "gallery": "heat" } }"#, &[]);
    assert_eq!(out.status.code(), Some(2));
    let missing = bin().arg("--config").arg(dir.path().join("nope.json")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let no_args = bin().output().unwrap();
    assert_eq!(no_args.status.code(), Some(2));
}

#[test]
fn convergence_writes_csv_and_applies_windows() {
    let dir = TempDir::new().unwrap();
    let json = format!(r#"{{ "command": "convergence", "problem": {{ "gallery": "heat-additive", "n": 16 }}, {SMALL_STUDY}, "windows": {{ "max_H_sq": [-10, 10] }} }}"#);
    let out = run(&dir, &json, &["--threads", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&dir, "convergence.csv");
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "m,tau,mean_max_H_sq,stderr_max_H_sq,mean_sum_V_sq,stderr_sum_V_sq,mean_sup_grid,n_paths_ok");
    assert_eq!(rows.iter().filter(|r| r.starts_with("fit,")).count(), 3);
    assert_eq!(rows.len(), 1 + 3 + 3);
    assert!(csv.contains("# base_seed=5"));

    let strict = format!(r#"{{ "command": "convergence", "problem": {{ "gallery": "heat-additive", "n": 16 }}, {SMALL_STUDY}, "windows": {{ "sum_V_sq": [5, 6] }} }}"#);
    assert_eq!(run(&dir, &strict, &[]).status.code(), Some(1));
    let bad_metric = format!(r#"{{ "command": "convergence", "problem": {{ "gallery": "heat-additive", "n": 16 }}, {SMALL_STUDY}, "windows": {{ "speed": [0, 1] }} }}"#);
    assert_eq!(run(&dir, &bad_metric, &[]).status.code(), Some(2));
}

#[test]
fn convergence_preconditions_and_degenerate_paths() {
    let dir = TempDir::new().unwrap();
    let bad = r#"{ "command": "convergence", "problem": { "gallery": "heat-additive", "n": 8 }, "study": { "levels": [3, 8, 16], "m_fine": 64, "n_paths": 2 } }"#;
    assert_eq!(run(&dir, bad, &[]).status.code(), Some(2));
    assert!(!dir.path().join("out").join("convergence.csv").exists());
    let inadmissible = r#"{ "command": "convergence", "problem": { "gallery": "quasilinear", "n": 8 }, "study": { "levels": [2, 4, 8], "m_fine": 64, "n_paths": 2 } }"#;
    assert_eq!(run(&dir, inadmissible, &[]).status.code(), Some(2));
    let single = r#"{ "command": "convergence", "problem": { "gallery": "heat-additive", "n": 8 }, "study": { "levels": [4, 8, 16], "m_fine": 64, "n_paths": 1 } }"#;
    assert_eq!(run(&dir, single, &[]).status.code(), Some(0));
    assert!(read(&dir, "convergence.csv").contains("NaN"));
}

#[test]
fn seed_flag_and_reruns_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let json = r#"{ "command": "convergence", "problem": { "gallery": "quasilinear", "n": 8 }, "study": { "levels": [8, 16, 32], "m_fine": 64, "n_paths": 3 } }"#;
    assert_eq!(run(&dir, json, &["--seed", "11"]).status.code(), Some(0));
    let first = read(&dir, "convergence.csv");
    assert!(first.contains("# base_seed=11"));
    assert_eq!(run(&dir, json, &["--seed", "11", "--threads", "1"]).status.code(), Some(0));
    assert_eq!(body(&first), body(&read(&dir, "convergence.csv")));
    assert_eq!(run(&dir, json, &["--seed", "12"]).status.code(), Some(0));
    assert_ne!(body(&first), body(&read(&dir, "convergence.csv")));
}

#[test]
fn first_step_compare_on_noise_free_problem_is_identical() {
    let dir = TempDir::new().unwrap();
    let json = format!(r#"{{ "command": "first-step-compare", "problem": {{ "gallery": "heat", "n": 8 }}, {SMALL_STUDY} }}"#);
    assert_eq!(run(&dir, &json, &[]).status.code(), Some(0));
    let paper = read(&dir, "convergence_paper.csv");
    let natural = read(&dir, "convergence_natural.csv");
    let rows = |s: &str| s.lines().filter(|l| !l.starts_with('#')).map(String::from).collect::<Vec<_>>();
    assert_eq!(rows(&paper), rows(&natural));
    let compare = read(&dir, "first_step_compare.csv");
    assert!(compare.starts_with("kind,key,paper,natural,difference"));
    assert_eq!(run(&dir, &json, &[]).status.code(), Some(0));
    assert_eq!(body(&paper), body(&read(&dir, "convergence_paper.csv")));
}

#[test]
fn first_step_compare_reports_noisy_difference() {
    let dir = TempDir::new().unwrap();
    let json = format!(r#"{{ "command": "first-step-compare", "problem": {{ "gallery": "heat-additive", "n": 8 }}, {SMALL_STUDY} }}"#);
    assert_eq!(run(&dir, &json, &[]).status.code(), Some(0));
    let compare = read(&dir, "first_step_compare.csv");
    assert!(compare.lines().any(|l| l.starts_with("slope,max_H_sq,")));
}

#[test]
fn solve_and_oracle_outputs() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, r#"{ "command": "solve", "problem": { "gallery": "quasilinear", "n": 8 }, "scheme": { "m": 16 } }"#, &["--dump-trajectory"]);
    assert_eq!(out.status.code(), Some(0));
    let traj = read(&dir, "trajectory.csv");
    assert_eq!(traj.lines().count(), 1 + 17);
    assert_eq!(traj.lines().next().unwrap().split(',').count(), 9);
    assert_eq!(read(&dir, "residuals.csv").lines().count(), 1 + 16);

    let out = run(&dir, r#"{ "command": "oracle", "problem": { "gallery": "heat", "n": 16 }, "scheme": { "m": 32 } }"#, &[]);
    assert_eq!(out.status.code(), Some(0));
    let oracle = read(&dir, "oracle.csv");
    assert_eq!(oracle.lines().count(), 1 + 33);
    let first_err: f64 = oracle.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(first_err < 1e-13);
    let out = run(&dir, r#"{ "command": "oracle", "problem": { "gallery": "quasilinear" } }"#, &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_directory_precedence() {
    let dir = TempDir::new().unwrap();
    let env_dir = dir.path().join("from-env");
    let cfg_dir = dir.path().join("from-config");
    let json = format!(
        r#"{{ "command": "oracle", "problem": {{ "gallery": "heat", "n": 8 }}, "scheme": {{ "m": 4 }}, "output": {:?} }}"#,
        cfg_dir.to_str().unwrap()
    );
    let config = write_config(dir.path(), &json);
    assert_eq!(bin().arg("--config").arg(&config).status().unwrap().code(), Some(0));
    assert!(cfg_dir.join("oracle.csv").exists());
    let status = bin().env("SPDE_OUTPUT_DIR", &env_dir).arg("--config").arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(env_dir.join("oracle.csv").exists());
    let flag_dir = dir.path().join("from-flag");
    let status =
        bin().env("SPDE_OUTPUT_DIR", &env_dir).arg("--config").arg(&config).arg("--output").arg(&flag_dir).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(flag_dir.join("oracle.csv").exists());
    let leftovers: Vec<_> = std::fs::read_dir(&flag_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1, "temporary files left behind: {leftovers:?}");
}

#[test]
fn zero_threads_is_rejected() {
    let dir = TempDir::new().unwrap();
    let json = format!(r#"{{ "command": "convergence", "problem": {{ "gallery": "heat", "n": 8 }}, {SMALL_STUDY} }}"#);
    assert_eq!(run(&dir, &json, &["--threads", "0"]).status.code(), Some(2));
}
