use std::path::{Path, PathBuf};
use std::process::Command;

use abc_cli::config::parse_rational;
use abc_cli::svg;
use abc_core::combinatorics::derive_stage;
use abc_core::geometry::{rat, Rational};
use abc_core::scheduler::{build_ladder, no_h_check, SchedulerConfig};
use abc_core::towers::build_bases;
use num_bigint::BigInt;
use proptest::prelude::*;
use serde_json::{json, Value};

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn small_desk() -> Value {
    json!({
        "mc": { "samples": 300 },
        "fbar": { "quadruples": 3, "probe_pairs": 4 }
    })
}

fn abc(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_abc")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn desk_run_passes_and_writes_six_reports() {
    let dir = scratch("desk");
    let cfg = write_config(&dir, &small_desk());
    let out = dir.join("out");
    std::fs::create_dir(&out).unwrap();
    let (code, stdout, stderr) = abc(&[cfg.to_str().unwrap(), "all", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}\n{stderr}");
    for name in ["plan", "combinatorics", "maps", "towers", "speed", "fbar"] {
        assert!(out.join(format!("{name}.json")).is_file(), "{name}");
    }
    for side in ["plan_table.txt", "combinatorics_n1.svg", "towers_n1.svg", "speed.csv", "fbar_lemma.csv"] {
        assert!(out.join(side).is_file(), "{side}");
    }
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["exit_code"], 0);
    assert_eq!(summary["stages"].as_array().unwrap().len(), 6);
    let speed = std::fs::read_to_string(out.join("speed.csv")).unwrap();
    assert!(speed.starts_with("n,tower,exact_term,bound"));
    // two towers and their total for each of the two stages
    assert_eq!(speed.lines().count(), 7);
    assert_eq!(speed.lines().filter(|l| l.split(',').nth(1) == Some("all")).count(), 2);
}

#[test]
fn shared_factor_exits_with_a_violation() {
    let dir = scratch("coprime");
    let cfg = write_config(&dir, &json!({ "alpha1": "1/2", "alpha1_prime": "1/4", "target": ["1/2", "1/4"] }));
    let (code, _, _) = abc(&[cfg.to_str().unwrap(), "plan", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 2);
    let plan = read_json(&dir.join("plan.json"));
    let err = plan["error"].as_str().unwrap();
    assert!(err.contains("condition (B)"), "{err}");
    assert_eq!(read_json(&dir.join("summary.json"))["exit_code"], 2);
}

#[test]
fn io_problems_exit_with_three() {
    let dir = scratch("io");
    let cfg = write_config(&dir, &small_desk());
    let missing = dir.join("nowhere");
    let (code, _, stderr) = abc(&[cfg.to_str().unwrap(), "plan", "--out", missing.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(stderr.contains("does not exist"));
    let (code, _, _) = abc(&[dir.join("absent.json").to_str().unwrap(), "plan", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 3);
    let bad = write_config(&dir, &json!({ "no_such_key": 1 }));
    let (code, _, _) = abc(&[bad.to_str().unwrap(), "plan", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 3);
}

#[test]
fn pair_mode_reports_the_distance() {
    let dir = scratch("pair");
    let cfg = write_config(&dir, &small_desk());
    let (code, _, _) = abc(&[cfg.to_str().unwrap(), "fbar", "--out", dir.to_str().unwrap(), "--a", "aab", "--b", "aba"]);
    assert_eq!(code, 0);
    let rep = read_json(&dir.join("fbar.json"));
    assert_eq!(rep["mode"], "pair");
    assert_eq!(rep["result"]["value"], json!({ "num": "1", "den": "3" }));
    let (code, _, _) = abc(&[cfg.to_str().unwrap(), "fbar", "--out", dir.to_str().unwrap(), "--a", "1,2,3", "--b", "1,2"]);
    assert_eq!(code, 2);
}

#[test]
fn combinatorics_figure_has_one_rectangle_per_cell() {
    let st = derive_stage(1, 2, 2.into(), 3.into(), 1.into(), 5.into(), BigInt::from(240), rat(0, 1)).unwrap();
    let text = svg::combinatorics(Some(&st));
    assert_eq!(text.matches("class=\"s1\"").count(), 15);
    assert_eq!(text.matches("class=\"s2\"").count(), 15);
    assert!(text.contains(">14</text>"));
    assert!(text.ends_with("</svg>\n"));
}

#[test]
fn towers_figure_shows_strips_and_levels() {
    let mut cfg = SchedulerConfig::desk();
    cfg.n_max = 1;
    let st = build_ladder(&cfg, no_h_check).unwrap().stages.remove(0);
    let pair = build_bases(&st).unwrap();
    let text = svg::towers(Some(&pair), 10);
    assert_eq!(text.matches("class=\"strip1\"").count(), 2);
    assert_eq!(text.matches("class=\"strip2\"").count(), 2);
    assert!(text.matches("class=\"level1\"").count() >= 10);
    assert!(text.matches("class=\"level2\"").count() >= 10);
}

#[test]
fn empty_stage_gives_a_skeleton() {
    for text in [svg::combinatorics(None), svg::towers(None, 5)] {
        assert!(text.starts_with("<svg"));
        assert!(text.ends_with("</svg>\n"));
        assert!(!text.contains("class="));
    }
}

proptest! {
    #[test]
    fn fractions_parse_exactly(p in -10_000i64..10_000, q in 1i64..10_000) {
        prop_assert_eq!(parse_rational(&format!("{p}/{q}")).unwrap(), rat(p, q));
        prop_assert_eq!(parse_rational(&format!(" {p} ")).unwrap(), rat(p, 1));
    }

    #[test]
    fn powers_of_ten_parse(k in 0usize..60) {
        let v = parse_rational(&format!("10^{k}")).unwrap();
        prop_assert_eq!(v, Rational::from_integer(num_traits::pow(BigInt::from(10), k)));
    }
}
