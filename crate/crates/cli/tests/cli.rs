use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tsfb_cli::manifest::bundle_digest;
use tsfb_cli::run_cli;

fn tsfb(args: &[&str]) -> i32 {
    let mut v = vec!["tsfb"];
    v.extend_from_slice(args);
    run_cli(v)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path, out: &str) -> PathBuf {
    let desk: Value =
        serde_json::from_slice(&fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.json")).unwrap())
            .unwrap();
    let mut cfg = desk.clone();
    cfg["output_dir"] = json!(out);
    cfg["panel"]["config"]["assets"] = json!(10);
    cfg["panel"]["config"]["years"] = json!(2);
    cfg["plan"]["window_sizes"] = json!([5, 21]);
    cfg["plan"]["first_oos_year"] = json!(2001);
    cfg["plan"]["last_oos_year"] = json!(2001);
    let models = desk["models"].as_array().unwrap();
    cfg["models"] = json!(models
        .iter()
        .filter(|m| ["ridge_h", "gbt/leaf"].contains(&m["name"].as_str().unwrap()))
        .collect::<Vec<_>>());
    let path = dir.join(format!("{out}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn malformed_date_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.csv");
    fs::write(
        &input,
        "date,asset_id,country,price,dividend,risk_free_daily,market_cap,delist_flag,delist_return\n\
         2020-01-02,A,US,10,0,0,1000,false,\n\
         2020-13-45,A,US,11,0,0,1000,false,\n",
    )
    .unwrap();
    let out = dir.path().join("clean");
    assert_eq!(tsfb(&["clean", p(&input), p(&out)]), 2);
    assert!(!out.join("panel.tsfb").exists());
}

#[test]
fn run_without_config_exits_with_code_2() {
    assert_eq!(tsfb(&["run"]), 2);
}

#[test]
fn unknown_config_key_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_config(dir.path(), "a");
    let mut v: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    v["surprise"] = json!(1);
    fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    assert_eq!(tsfb(&["--config", p(&path), "run"]), 2);
}

#[test]
fn synth_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(tsfb(&["--seed", "7", "synth", p(&a)]), 0);
    assert_eq!(tsfb(&["--seed", "7", "synth", p(&b)]), 0);
    for f in ["panel.csv", "synth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert_eq!(tsfb(&["--seed", "8", "synth", p(&c)]), 0);
    assert_ne!(fs::read(a.join("panel.csv")).unwrap(), fs::read(c.join("panel.csv")).unwrap());
}

#[test]
fn dry_run_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "out");
    let before: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(tsfb(&["--config", p(&cfg), "--dry-run", "run"]), 0);
    assert_eq!(tsfb(&["--dry-run", "synth", p(&dir.path().join("s"))]), 0);
    let after: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(before, after);
}

#[test]
fn run_and_report_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (ca, cb) = (small_config(dir.path(), "a"), small_config(dir.path(), "b"));
    assert_eq!(tsfb(&["--config", p(&ca), "run"]), 0);
    assert_eq!(tsfb(&["--config", p(&cb), "run"]), 0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ha = bundle_digest(&a).unwrap();
    assert_eq!(ha, bundle_digest(&b).unwrap());
    for f in ["report/sharpe_grid.csv", "report/digest.csv", "report/metrics.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert_eq!(tsfb(&["report", p(&a)]), 0);
    assert_eq!(bundle_digest(&a).unwrap(), ha);
    assert_eq!(tsfb(&["--config", p(&ca), "--seed", "1", "run"]), 0);
    assert_ne!(bundle_digest(&a).unwrap(), ha);
}
