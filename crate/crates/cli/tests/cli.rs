use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_matheron-enkf");
const POSTERIOR_HEADER: &str =
    "method,grid_index,position,truth,is_observed,obs_value,post_mean,post_std,draw_id,draw_value";
const TIMING_HEADER: &str = "method,axis,axis_value,fit_time_s,predict_time_s,rmse,runs,seed";

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MATHERON_ENKF_SEED")
        .output()
        .expect("binary runs")
}

fn run_with_env(args: &[&str], seed: &str) -> Output {
    Command::new(BIN)
        .args(args)
        .env("MATHERON_ENKF_SEED", seed)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small_demo(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "demo",
        "--d",
        "50",
        "--n-ens",
        "40",
        "--runs",
        "3",
        "--draws",
        "2",
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn equivalence_seed_7_passes() {
    let out = run(&["equivalence", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let value: f64 = stdout
        .split_whitespace()
        .nth(3)
        .and_then(|v| v.parse().ok())
        .expect("value printed");
    assert!(value <= 1e-9, "{stdout}");
}

#[test]
fn moments_check_passes() {
    let out = run(&["moments-check", "--draws", "50000", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn demo_writes_one_row_per_method_point_and_draw() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_demo(dir.path(), &["--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("posterior_samples.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(POSTERIOR_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50 * 3 * (1 + 2));
    assert!(rows.iter().all(|r| r.split(',').count() == 10));
    let summary: Vec<&&str> = rows.iter().filter(|r| r.contains(",-1,")).collect();
    assert_eq!(summary.len(), 150);
    assert!(summary.iter().all(|r| r.ends_with(",-1,")));
    let observed = rows.iter().filter(|r| r.starts_with("gp,") && r.ends_with(",-1,") && r.split(',').nth(4) == Some("1"));
    assert_eq!(observed.count(), 10);
}

#[test]
fn demo_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = small_demo(dir.path(), &["--seed", "4", "--perturb-obs"]);
        assert_eq!(code(&out), 0);
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("posterior_samples.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn out_dir_is_created() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("a/b");
    let out = small_demo(&nested, &["--methods", "gp"]);
    assert_eq!(code(&out), 0);
    assert!(nested.join("posterior_samples.csv").exists());
}

fn sweep_rows(dir: &Path, file: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(dir.join(file)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TIMING_HEADER));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweeps_write_timing_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "sweep-obs", "--d", "60", "--values", "6,12", "--n-ens", "20", "--runs", "3", "--draws", "0", "--out-dir", d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = sweep_rows(dir.path(), "timing_vs_observations.csv");
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[1] == "observations" && r[6] == "3"));
    assert_eq!(rows.iter().filter(|r| r[2] == "12").count(), 3);

    let out = run(&[
        "sweep-dim", "--m", "5", "--values", "20,30", "--n-ens", "20", "--runs", "3", "--draws", "0", "--methods",
        "enkf,letkf", "--out-dir", d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = sweep_rows(dir.path(), "timing_vs_dimensions.csv");
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1] == "dimensions" && r[0] != "gp"));
}

#[test]
fn sweep_non_timing_columns_are_reproducible() {
    let collect = || {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&[
            "sweep-dim", "--m", "4", "--values", "20,40", "--n-ens", "10", "--runs", "3", "--draws", "0", "--seed", "6",
            "--out-dir", dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        sweep_rows(dir.path(), "timing_vs_dimensions.csv")
            .into_iter()
            .map(|r| [&r[0], &r[1], &r[2], &r[5], &r[6], &r[7]].map(String::clone))
            .collect::<Vec<_>>()
    };
    assert_eq!(collect(), collect());
}

#[test]
fn config_file_then_overrides_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "# small instance\nd = 30\nmethods = gp\nseed = 3\nruns = 3\ndraws = 0\n").unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>| {
        let mut args = vec![
            "sweep-obs",
            "--values",
            "3",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = match env {
            Some(s) => run_with_env(&args, s),
            None => run(&args),
        };
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let rows = sweep_rows(dir.path(), "timing_vs_observations.csv");
        assert_eq!(rows.len(), 1);
        rows[0][7].clone()
    };
    assert_eq!(seed_of(&[], None), "3");
    assert_eq!(seed_of(&[], Some("8")), "3");
    assert_eq!(seed_of(&["--set", "seed=4"], None), "4");
    assert_eq!(seed_of(&["--set", "seed=4", "--seed", "5"], None), "5");
}

#[test]
fn environment_seed_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "sweep-obs", "--d", "30", "--values", "3", "--methods", "gp", "--runs", "3", "--draws", "0", "--out-dir", d,
    ];
    assert_eq!(code(&run_with_env(&args, "8")), 0);
    assert_eq!(sweep_rows(dir.path(), "timing_vs_observations.csv")[0][7], "8");
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(sweep_rows(dir.path(), "timing_vs_observations.csv")[0][7], "0");
    assert_eq!(code(&run_with_env(&args, "eight")), 2);
}

#[test]
fn bad_arguments_exit_2() {
    let out = run(&["demo", "--no-such-flag"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&run(&["frobnicate"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["demo", "--d", "5", "--out-dir", d])), 2);
    assert_eq!(code(&run(&["demo", "--runs", "4", "--out-dir", d])), 2);
    assert_eq!(code(&run(&["demo", "--methods", "gp,kriging", "--out-dir", d])), 2);
    assert_eq!(code(&run(&["demo", "--set", "colour=red", "--out-dir", d])), 2);
    assert_eq!(code(&run(&["sweep-obs", "--values", "80,40", "--out-dir", d])), 2);

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "d: 30\n").unwrap();
    assert_eq!(code(&run(&["demo", "--config", cfg.to_str().unwrap(), "--out-dir", d])), 2);
    assert_eq!(code(&run(&["demo", "--config", "/no/such/file", "--out-dir", d])), 2);
}
