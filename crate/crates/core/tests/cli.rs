use std::path::Path;
use std::process::{Command, Output};

use marriage_rp::io::{market_to_json, read_market};
use marriage_rp::simulate::{generate_market, substream, CommittedPattern, GeneratorParams};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marriage-rp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_generated(dir: &Path, name: &str, committed: CommittedPattern, income_factor: f64) -> String {
    let params = GeneratorParams {
        couples: 3,
        committed,
        ..Default::default()
    };
    let mut market = generate_market(&params, &mut substream(3, 0, 0));
    for c in 0..3 {
        let own = market.couple_key(c);
        for (key, y) in market.incomes.iter_mut() {
            if *key != own && key.man == own.man && key.woman.is_some() {
                *y *= income_factor;
            }
        }
    }
    let path = dir.join(name);
    std::fs::write(&path, market_to_json(&market)).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_writes_a_valid_market() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let out = bin(&[
        "gen",
        "--couples",
        "4",
        "--seed",
        "5",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let market = read_market(&path).unwrap();
    assert_eq!(market.couples(), 4);
}

#[test]
fn check_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let stable = write_generated(dir.path(), "stable.json", CommittedPattern::All, 1.0);
    let out = bin(&["check", &stable, "--regime", "transfers"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).starts_with("rationalizable"));

    let rich = write_generated(dir.path(), "rich.json", CommittedPattern::None, 3.0);
    let out = bin(&["check", &rich, "--regime", "unilateral", "--json"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["rationalizable"], false);
    assert!(v["counterexample"].is_string());
}

#[test]
fn malformed_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"n_private\": 1}").unwrap();
    let out = bin(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));
    assert_eq!(bin(&["simulate", "--draws", "0"]).status.code(), Some(2));
    assert_eq!(bin(&["simulate", "--alpha", "1.5"]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn index_and_identify_tables() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_generated(dir.path(), "a.json", CommittedPattern::All, 1.0);
    let out = bin(&["index", &a]);
    assert!(out.status.success());
    let text = stdout(&out);
    for label in ["unilateral", "transfers", "no-transfers"] {
        assert!(text.contains(label), "{text}");
    }
    let out = bin(&["index", &a, "--regime", "transfers", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v[0]["average"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let b = write_generated(dir.path(), "b.json", CommittedPattern::Alternating, 1.0);
    let out = bin(&["identify", &a, &b, "--regime", "transfers"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().nth(1).unwrap().starts_with("naive"), "{text}");
}

#[test]
fn simulate_formats() {
    let common = [
        "simulate",
        "--draws",
        "2",
        "--couples",
        "3",
        "--alpha",
        "0,0.1",
        "--scenario",
        "prices",
    ];
    let table = bin(&common);
    assert!(table.status.success());
    assert!(stdout(&table).contains("[prices] average stability index: mean"));
    let csv = bin(&[&common[..], &["--format", "csv", "--regime", "unilateral"]].concat());
    let text = stdout(&csv);
    assert!(text.starts_with("scenario,alpha,regime,metric"));
    assert_eq!(text.lines().filter(|l| l.contains(",index,")).count(), 2);
}
