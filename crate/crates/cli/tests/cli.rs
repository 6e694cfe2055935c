use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn padic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_padic"))
        .args(args)
        .env_remove("PADIC_BUDGET")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

const UNIT_BALL_CELL_P2: &str =
    r#"{"center":"0","lower":-1,"upper":null,"mod":1,"res":0,"acDepth":1,"acValue":1,"p":2}"#;

#[test]
fn measure_of_the_unit_ball_cell() {
    let dir = TempDir::new().unwrap();
    let cell = write(&dir, "cell.json", UNIT_BALL_CELL_P2);
    let o = padic(&["measure", "--p", "2", cell.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "1\n");

    let o = padic(&["measure", "--json", cell.to_str().unwrap()]);
    let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(j["value"], "1");
    assert_eq!(j["measure"], "q^-1/(1 - q^-1)");
}

#[test]
fn measure_of_a_cell_list_adds_up() {
    let dir = TempDir::new().unwrap();
    // p = 3: {ac = 1} and {ac = 2} around 0 together fill the punctured ball
    let cells = write(
        &dir,
        "cells.json",
        r#"[{"center":"0","lower":-1,"upper":null,"mod":1,"res":0,"acDepth":1,"acValue":1,"p":3},
            {"center":"0","lower":-1,"upper":null,"mod":1,"res":0,"acDepth":1,"acValue":2,"p":3}]"#,
    );
    let o = padic(&["measure", cells.to_str().unwrap()]);
    assert_eq!(stdout(&o), "1\n");

    let overlapping = write(
        &dir,
        "overlap.json",
        r#"[{"center":"0","lower":-1,"upper":null,"mod":1,"res":0,"acDepth":1,"acValue":1,"p":3},
            {"center":"0","lower":0,"upper":null,"mod":1,"res":0,"acDepth":1,"acValue":1,"p":3}]"#,
    );
    let o = padic(&["measure", overlapping.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("InvalidCell"));
}

#[test]
fn wmin_example() {
    let dir = TempDir::new().unwrap();
    let cells = write(&dir, "cells.json", r#"[{"lower":null,"upper":-2,"mod":3,"res":1}]"#);
    let o = padic(&["wmin", cells.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "-5\n");
}

#[test]
fn gsum_bounded_even() {
    let dir = TempDir::new().unwrap();
    let cell = write(&dir, "cell.json", r#"{"lower":0,"upper":5,"mod":2,"res":0}"#);
    let o = padic(&["gsum", cell.to_str().unwrap(), "--n", "2", "--p", "2"]);
    assert_eq!(stdout(&o), "q^-2 + q^-4\n5/16\n");
    let o = padic(&["gsum", "--json", cell.to_str().unwrap(), "--n", "2"]);
    let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(j["sum"], "q^-2 + q^-4");
    assert_eq!(j["value"], Value::Null);
}

#[test]
fn unbounded_below_gsum_diverges() {
    let dir = TempDir::new().unwrap();
    let cell = write(&dir, "cell.json", r#"{"lower":null,"upper":0,"mod":1,"res":0}"#);
    let o = padic(&["gsum", cell.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("DivergentSum"), "{}", stderr(&o));
}

#[test]
fn ord_and_ac() {
    let o = padic(&["ord", "--p", "3", "18/5"]);
    assert_eq!(stdout(&o), "2\n");
    let o = padic(&["ord", "--p", "3", "0"]);
    assert_eq!(stdout(&o), "INFINITY\n");
    // 7/2 ≡ 7·13 = 91 ≡ 16 mod 25
    let o = padic(&["ac", "--p", "5", "7/2", "2"]);
    assert_eq!(stdout(&o), "16\n");
    let o = padic(&["ac", "--p", "5", "7/2", "--depth", "1"]);
    assert_eq!(stdout(&o), "1\n");
}

#[test]
fn integrate_with_oracle() {
    let dir = TempDir::new().unwrap();
    let d = write(&dir, "d.json", r#"{"vars":[{"name":"x1","sort":"K","region":"unit_ball"}]}"#);
    let o = padic(&[
        "integrate",
        "--json",
        "q^(-ord(x1))",
        d.to_str().unwrap(),
        "--p",
        "3",
        "--oracle",
        "--depth",
        "5",
        "--growth",
        "1,0,-1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(j["integral"], "(1 - q^-1)/(1 - q^-2)");
    assert_eq!(j["value"], "3/4");
    assert_eq!(j["oracle"]["depth"], "5");
    assert!(j["oracle"]["tail_bound"].is_string());
}

#[test]
fn poincare_report_json() {
    let o = padic(&["poincare", "--p", "3", "--mmax", "11", "x1^2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(j["rational"]["text"], "(1 + T)/(1 - 3*T^2)");
    assert_eq!(j["rational"]["num"], "1 + T");
    assert_eq!(j["rational"]["den"], "(1 - 3*T^2)");
    assert_eq!(j["guard"], "5");
    assert_eq!(j["shape"][0]["N"], "2");
    assert_eq!(j["shape"][0]["m"], "-1");
    assert_eq!(j["counts"][4], "9");
    assert!(j["checks"].as_array().unwrap().iter().all(|c| c["counting"] == true));
}

#[test]
fn poincare_text_report() {
    let o = padic(&["poincare", "--p", "2", "--mmax", "9", "x1", "--text"]);
    let s = stdout(&o);
    assert!(s.contains("P(T) = 1/(1 - T)"), "{s}");
    assert!(s.contains("shape: (N=1, m=0)"));
}

#[test]
fn json_output_is_byte_identical_across_runs() {
    let args = ["poincare", "--p", "2", "--mmax", "9", "x1*x2"];
    assert_eq!(padic(&args).stdout, padic(&args).stdout);
}

#[test]
fn parse_errors_exit_2() {
    let o = padic(&["poincare", "--p", "3", "--mmax", "5", "x1^"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ParseError at 1:4"), "{}", stderr(&o));

    let dir = TempDir::new().unwrap();
    let broken = write(&dir, "broken.json", "{\"lower\": ");
    let o = padic(&["wmin", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = padic(&["ord", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = padic(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1_with_name() {
    let o = padic(&["ord", "--p", "4", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("NotPrime"));

    let dir = TempDir::new().unwrap();
    let bad = write(
        &dir,
        "bad.json",
        r#"{"center":"0","lower":-1,"upper":null,"mod":2,"res":3,"acDepth":1,"acValue":1,"p":2}"#,
    );
    let o = padic(&["measure", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("InvalidCell"), "{}", stderr(&o));
}

#[test]
fn budget_exits_3_and_env_overrides_flag() {
    let o = padic(&["poincare", "--p", "2", "--mmax", "8", "--budget", "10", "x1*x2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("BudgetExceeded"));

    let o = Command::new(env!("CARGO_BIN_EXE_padic"))
        .args(["poincare", "--p", "2", "--mmax", "8", "--budget", "100000000", "x1*x2"])
        .env("PADIC_BUDGET", "10")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));

    let o = Command::new(env!("CARGO_BIN_EXE_padic"))
        .args(["poincare", "--p", "2", "--mmax", "8", "--budget", "10", "x1*x2"])
        .env("PADIC_BUDGET", "100000000")
        .output()
        .unwrap();
    assert!(o.status.success());
}
