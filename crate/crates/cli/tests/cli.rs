//! End-to-end tests of the binary: flag parsing, JSON/CSV shapes, exit
//! codes, piping `solve` into `verify`, and byte-for-byte determinism.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chainsell"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Slow-switching parameters whose rule has two thresholds.
const TWO_THRESHOLD: &[&str] = &[
    "--f1", "0.07", "--f2", "-0.03", "--lambda1", "1", "--lambda2", "1", "--rho", "0.10",
    "--cost", "0.01",
];

/// Half-year-style calibrated parameters under which discounting at 3% is
/// too weak for any finite threshold.
const NEVER_SELL: &[&str] = &[
    "--f1", "10.45", "--f2", "-10.61", "--lambda1", "100.48", "--lambda2", "124.23", "--rho",
    "0.03", "--cost", "0.01",
];

#[test]
fn solve_prints_the_rule_as_json() {
    let out = run(&[&["solve"], TWO_THRESHOLD].concat());
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let v = stdout_json(&out);
    assert_eq!(v["regime"], "CaseII");
    assert!((v["x_star"].as_f64().unwrap() - 0.012478).abs() < 1e-5);
    assert!((v["x0_star"].as_f64().unwrap() - 0.033333).abs() < 1e-5);
    assert!((v["X0"].as_f64().unwrap() - 0.013326).abs() < 1e-5);
    assert!(v["A2"].as_f64().unwrap() > 0.0);
    assert!(v["C1"].as_f64().unwrap() > 0.0);
    assert_eq!(v["params"]["K"].as_f64().unwrap(), 0.01);
    assert!(v["derived"]["beta2"].as_f64().unwrap() > 1.0);
    assert_eq!(v["diagnostics"][0]["kind"], "threshold_bound");
    assert_eq!(v["diagnostics"][0]["within_bound"], true);
}

#[test]
fn params_file_fills_in_whatever_flags_leave_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");
    fs::write(
        &path,
        r#"{"f1":0.07,"f2":-0.03,"lambda1":1.0,"lambda2":1.0,"rho":0.10,"K":0.01}"#,
    )
    .unwrap();
    let base = run(&["solve", "--params", path.to_str().unwrap()]);
    assert_eq!(code(&base), 0, "stderr: {}", stderr_text(&base));
    assert_eq!(stdout_json(&base)["params"]["rho"].as_f64().unwrap(), 0.10);

    // A flag wins over the file's field; everything else stays.
    let out = run(&["solve", "--params", path.to_str().unwrap(), "--rho", "0.12"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["params"]["rho"].as_f64().unwrap(), 0.12);
    assert_eq!(v["params"]["f1"].as_f64().unwrap(), 0.07);
}

#[test]
fn solve_piped_into_verify_certifies_the_rule() {
    let solved = run(&[&["solve"], TWO_THRESHOLD].concat());
    assert_eq!(code(&solved), 0);
    let out = run_with_stdin(&["verify"], std::str::from_utf8(&solved.stdout).unwrap());
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let report = stdout_json(&out);
    assert_eq!(report["passed"], true);
    assert!(report["residual_max_rel"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn corrupting_the_stored_constant_fails_verification() {
    let solved = run(&[&["solve"], TWO_THRESHOLD].concat());
    let mut rule = stdout_json(&solved);
    let a2 = rule["A2"].as_f64().unwrap();
    rule["A2"] = serde_json::json!(a2 * 1.01);
    let out = run_with_stdin(&["verify"], &rule.to_string());
    assert_eq!(code(&out), 1, "stderr: {}", stderr_text(&out));
    assert_eq!(stdout_json(&out)["passed"], false);
}

#[test]
fn weak_discounting_exits_three_with_an_explanation() {
    let out = run(&[&["solve"], NEVER_SELL].concat());
    assert_eq!(code(&out), 3);
    assert_eq!(stdout_json(&out)["regime"], "NeverSell");
    let err = stderr_text(&out);
    assert!(err.contains("never sell"), "stderr: {err}");
    assert!(err.contains("phi"), "stderr: {err}");

    // Downstream commands that need a finite rule refuse the same way.
    let out = run(&[&["mc-value"], NEVER_SELL].concat());
    assert_eq!(code(&out), 3, "stderr: {}", stderr_text(&out));
}

#[test]
fn missing_parameters_exit_two_and_name_the_gaps() {
    let out = run(&["solve", "--f1", "0.07"]);
    assert_eq!(code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("missing parameters"), "stderr: {err}");
    assert!(err.contains("--lambda1"), "stderr: {err}");
}

#[test]
fn malformed_grid_and_state_exit_two() {
    let out = run(&[&["verify"], TWO_THRESHOLD, &["--grid", "1:2"]].concat());
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("MIN:MAX:N"));

    let out = run(&[&["simulate"], TWO_THRESHOLD, &["--state", "3"]].concat());
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("--state"));
}

#[test]
fn value_grid_prints_one_csv_row_per_point() {
    let out = run(&[&["value"], TWO_THRESHOLD, &["--grid", "0.005:0.04:8"]].concat());
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,v1,v2");
    assert_eq!(lines.len(), 9);
    let first: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
    let last: Vec<f64> = lines[8].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(first[0], 0.005);
    assert_eq!(last[0], 0.04);
    // Above both thresholds the value is the sale proceeds.
    assert_eq!(last[1], 0.03);
    assert_eq!(last[2], 0.03);
}

#[test]
fn simulate_emits_a_deterministic_sampled_path() {
    let args = [
        &["simulate"],
        TWO_THRESHOLD,
        &["--horizon", "0.5", "--delta", "0.05", "--seed", "99"],
    ]
    .concat();
    let out = run(&args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,state,price");
    assert_eq!(lines.len(), 12); // t = 0.00, 0.05, ..., 0.50
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert!(fields[1] == "1" || fields[1] == "2", "state field: {line}");
        assert!(fields[2].parse::<f64>().unwrap() > 0.0);
    }
    assert!(lines[1].starts_with("0,"), "first row: {}", lines[1]);

    let again = run(&args);
    assert_eq!(out.stdout, again.stdout, "same seed must reproduce the path bytes");
}

#[test]
fn mc_value_from_the_sell_region_is_exact() {
    let out = run(&[
        &["mc-value"],
        TWO_THRESHOLD,
        &["--x0", "0.05", "--state", "1", "--paths", "64", "--seed", "7"],
    ]
    .concat());
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let v = stdout_json(&out);
    // Starting above the upper threshold sells immediately on every path.
    assert!((v["mean"].as_f64().unwrap() - 0.04).abs() < 1e-12);
    assert_eq!(v["std_error"].as_f64().unwrap(), 0.0);
    assert_eq!(v["n_paths"].as_u64().unwrap(), 64);
    assert_eq!(v["n_unstopped"].as_u64().unwrap(), 0);

    let again = run(&[
        &["mc-value"],
        TWO_THRESHOLD,
        &["--x0", "0.05", "--state", "1", "--paths", "64", "--seed", "7"],
    ]
    .concat());
    assert_eq!(out.stdout, again.stdout, "same seed must reproduce the estimate bytes");
}

#[test]
fn gbm_limit_table_tightens_toward_the_diffusion_values() {
    let out = run(&["gbm-limit"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epsilon,admissible,beta2,x_star,beta0,x_star_limit");
    assert_eq!(lines.len(), 4);
    let mut previous_gap = f64::INFINITY;
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], "true");
        let beta2: f64 = fields[2].parse().unwrap();
        let beta0: f64 = fields[4].parse().unwrap();
        assert!((beta0 - 1.78394586163).abs() < 1e-9);
        let gap = (beta2 - beta0).abs();
        assert!(gap < previous_gap, "row {line}: gap {gap} vs {previous_gap}");
        previous_gap = gap;
    }
}

/// Appends `n` log-increments alternating between `+a` and `-a`.
fn extend_alternating(incs: &mut Vec<f64>, a: f64, n: usize) {
    incs.extend((0..n).map(|i| if i % 2 == 0 { a } else { -a }));
}

fn closes_from_increments(incs: &[f64]) -> Vec<f64> {
    let mut closes = vec![1.0];
    for dz in incs {
        closes.push(closes.last().unwrap() * dz.exp());
    }
    closes
}

fn write_prices_csv(dir: &Path, closes: &[f64]) -> PathBuf {
    let path = dir.join("prices.csv");
    let mut text = String::from("date,close\n");
    for (i, c) in closes.iter().enumerate() {
        text.push_str(&format!("{i},{c}\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn calibrate_estimates_from_a_close_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut incs = Vec::new();
    extend_alternating(&mut incs, 0.004, 126);
    let path = write_prices_csv(dir.path(), &closes_from_increments(&incs));
    let out = run(&["calibrate", "--prices", path.to_str().unwrap(), "--rho", "0.03"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let v = stdout_json(&out);
    assert!(v["f1_hat"].as_f64().unwrap() > 0.0);
    assert!(v["f2_hat"].as_f64().unwrap() < 0.0);
    assert!(v["lambda1_hat"].as_f64().unwrap() > 0.0);
    assert!(v["lambda2_hat"].as_f64().unwrap() > 0.0);
    // Day counts must survive as exact integers.
    assert!(v["R1"].is_u64() && v["R2"].is_u64(), "counts: {} {}", v["R1"], v["R2"]);
    assert!(v["phi_rho"].is_number());
}

#[test]
fn backtest_reports_windows_and_the_sale_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    // One noisy-flat window (phi < 0: hold), one tightly alternating window
    // (phi > 0: arm the rule), then a surge, a flat day, and a dip that
    // triggers the sale on the dip (index 255).
    let mut incs: Vec<f64> = (0..126).map(|i| if i % 4 < 2 { 0.02 } else { -0.02 }).collect();
    extend_alternating(&mut incs, 0.004, 126);
    incs.extend([0.70, 0.0, -0.0005]);
    let path = write_prices_csv(dir.path(), &closes_from_increments(&incs));
    let table = dir.path().join("windows.csv");

    let out = run(&[
        "backtest",
        "--prices",
        path.to_str().unwrap(),
        "--rho",
        "0.03",
        "--cost",
        "1.0",
        "--table",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let v = stdout_json(&out);
    assert_eq!(v["windows"].as_array().unwrap().len(), 2);
    assert_eq!(v["windows"][0]["decision"], "hold");
    assert_eq!(v["windows"][1]["decision"], "sell_regime");
    assert_eq!(v["sale"]["index"].as_u64().unwrap(), 255);
    assert_eq!(v["sale"]["state"].as_u64().unwrap(), 2);
    assert!(v["sale"]["price"].as_f64().unwrap() > v["sale"]["x_star"].as_f64().unwrap());

    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "period,f1,f2,lambda1,lambda2,phi_rho");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0..125,"), "first window row: {}", lines[1]);
    assert!(lines[2].starts_with("126..251,"), "second window row: {}", lines[2]);
}

#[test]
fn out_flag_writes_the_file_and_keeps_stdout_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rule.json");
    let out = run(&[&["solve"], TWO_THRESHOLD, &["--out", path.to_str().unwrap()]].concat());
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["regime"], "CaseII");

    // The written rule certifies when read back from the file.
    let verify = run(&["verify", "--rule", path.to_str().unwrap()]);
    assert_eq!(code(&verify), 0, "stderr: {}", stderr_text(&verify));
}
