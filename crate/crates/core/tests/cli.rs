use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mwtl");

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json")
}

fn mwtl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn mwtl")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"config_id": "small", "grid": {"n": 1, "L": 6}, "m": 2,
 "weight": {"kind": "constant", "matrix": [[2.0, 0.7], [0.7, 1.0]]},
 "p": 2, "q": 2, "corpus": {"size": 4, "seed": 1},
 "checks": ["calderon", "reduce", "equiv", "fs"]}"#;

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn demo_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mwtl(&["run", "--config", demo_config().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    for check in ["apchar", "calderon", "equiv", "multiplier"] {
        assert_eq!(summary[check]["pass"], true, "{check}");
    }
    assert!(out.join("resolved_config.json").exists());
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = mwtl(&["run", "--config", &cfg, "--out", d.to_str().unwrap(), "--seed", "9"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(dir_files(&a), dir_files(&b));
}

#[test]
fn seed_override_changes_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace(r#""corpus": {"size": 4, "seed": 1}"#, r#""corpus": {"size": 4}"#);
    let cfg = write_config(tmp.path(), "small.json", &body);
    let mut corpora = Vec::new();
    for seed in ["1", "2"] {
        let d = tmp.path().join(seed);
        let o = mwtl(&["gen-weight", "--config", &cfg, "--out", d.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        corpora.push(fs::read(d.join("corpus_000.csv")).unwrap());
    }
    assert_ne!(corpora[0], corpora[1]);
}

#[test]
fn failed_threshold_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace(r#""checks""#, r#""thresholds": {"fs_bound": 1.0}, "checks""#);
    let cfg = write_config(tmp.path(), "tight.json", &body);
    let o = mwtl(&["check", "fs", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fs"));
}

#[test]
fn bad_input_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none.json");
    let o = mwtl(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "bad.json", &SMALL.replace("\"p\": 2", "\"p\": -1"));
    let o = mwtl(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = mwtl(&["check", "nonsense", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}
