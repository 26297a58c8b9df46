use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const GRAMMAR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/english.pcfg");
const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample.trees");

fn distparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distparse")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = distparse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Synthetic train corpus plus a 15-member simulated ensemble.
fn corpus(dir: &TempDir) -> PathBuf {
    let d = dir.path();
    ok(&[
        "gen-synthetic", "--grammar", GRAMMAR, "--n", "120", "--seed", "11",
        "--out", &p(d, "train.trees"), "--sentences-out", &p(d, "train.txt"),
        "--ensemble-dir", &p(d, "ens"), "--rotation-rate", "0.3",
    ]);
    d.to_path_buf()
}

#[test]
fn identical_files_score_one_hundred() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["eval", "--gold", SAMPLE, "--pred", SAMPLE, "--run-json", &p(dir.path(), "run.json")]);
    assert!(out.contains("macro_f1: 100.00"), "{out}");
    assert!(out.contains("full_span=included"));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"]["Eval"]["binarize"], "right");
}

#[test]
fn convert_round_trips_through_both_encodings() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for (enc, dec) in [("tree2dl", "dl2tree"), ("tree2dg", "dg2tree")] {
        ok(&["convert", "--mode", enc, "--in", SAMPLE, "--out", &p(d, "d.jsonl")]);
        ok(&["convert", "--mode", dec, "--in", &p(d, "d.jsonl"), "--out", &p(d, "back.trees")]);
        let out = ok(&["eval", "--gold", SAMPLE, "--pred", &p(d, "back.trees"), "--run-json", &p(d, "e.json")]);
        assert!(out.contains("macro_f1: 100.00"), "{enc}: {out}");
    }
    assert!(d.join("run.json").exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(distparse(&["eval", "--gold", SAMPLE]).status.code(), Some(1));
    assert_eq!(distparse(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        distparse(&["eval", "--gold", &p(d, "missing.trees"), "--pred", SAMPLE]).status.code(),
        Some(2)
    );
    fs::write(d.join("bad.trees"), "(S (NP a b)\n").unwrap();
    let out = distparse(&["eval", "--gold", SAMPLE, "--pred", &p(d, "bad.trees"), "--run-json", &p(d, "r.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let out = distparse(&["selftrain", "--unlabeled", SAMPLE, "--ensemble-dir", d.to_str().unwrap(), "--out-dir", &p(d, "o"), "--mu", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trivial_baselines_report_their_convention() {
    let dir = TempDir::new().unwrap();
    for kind in ["left", "right", "random"] {
        let out = ok(&["eval", "--gold", SAMPLE, "--trivial", kind, "--no-full-span", "--run-json", &p(dir.path(), "r.json")]);
        assert!(out.contains("full_span=excluded"), "{out}");
        assert!(out.contains("macro_f1:"));
    }
}

#[test]
fn selftrain_is_deterministic_and_writes_reports() {
    let dir = TempDir::new().unwrap();
    let d = corpus(&dir);
    let run = |name: &str| {
        ok(&[
            "selftrain", "--unlabeled", &p(&d, "train.txt"), "--ensemble-dir", &p(&d, "ens"),
            "--out-dir", &p(&d, name), "--reference", &p(&d, "train.trees"),
            "--epochs", "3", "--hidden", "20", "--embed", "10", "--seed", "4", "--jobs", "2",
        ]);
        d.join(name)
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["silver.jsonl", "silver_stats.csv", "agreement.csv", "model.json", "run.json"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read(a.join("silver.jsonl")).unwrap(), fs::read(b.join("silver.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
    let agreement = fs::read_to_string(a.join("agreement.csv")).unwrap();
    assert_eq!(agreement.lines().count(), 16);

    ok(&["parse", "--model", &p(&a, "model.json"), "--in", &p(&d, "train.txt"), "--out", &p(&d, "pred.trees")]);
    let out = ok(&["eval", "--gold", &p(&d, "train.trees"), "--pred", &p(&d, "pred.trees"), "--run-json", &p(&d, "r.json")]);
    assert!(out.contains("sentences: 120"));
    ok(&[
        "analyze", "--gold", &p(&d, "train.trees"), "--out-dir", &p(&d, "an"),
        "--ensemble-dir", &p(&d, "ens"), "--unlabeled", &p(&d, "train.txt"),
        "--baseline", &p(&d, "ens/member_0.trees"), "--selftrained", &p(&d, "pred.trees"),
    ]);
    let buckets = fs::read_to_string(d.join("an/buckets.csv")).unwrap();
    assert!(buckets.starts_with("range,count,avg_f1,pct_improved"));
}

#[test]
fn train_then_parse_with_labels() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("train.cfg"), "epochs = 2\nhidden = 12\nembed = 8\n").unwrap();
    let log = ok(&[
        "train", "--gold", SAMPLE, "--out", &p(d, "m.json"), "--low-resource",
        "--config", &p(d, "train.cfg"), "--epochs", "3",
    ]);
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["training"]["hidden"], 12);
    assert_eq!(run["training"]["head"], "dg");
    fs::write(d.join("s.txt"), "The cat sat on the mat .\nunseen words here\n").unwrap();
    ok(&["parse", "--model", &p(d, "m.json"), "--in", &p(d, "s.txt"), "--out", &p(d, "p.trees"), "--head", "dg", "--labels"]);
    let parsed = fs::read_to_string(d.join("p.trees")).unwrap();
    assert_eq!(parsed.lines().count(), 2);
}

#[test]
fn punctuation_can_be_removed_before_scoring() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("g.trees"), "(S (NP a b) (VP c d) (. .))\n").unwrap();
    fs::write(d.join("p.trees"), "(_ (_ (_ a b) (_ c d)) .)\n").unwrap();
    let kept = ok(&["eval", "--gold", &p(d, "g.trees"), "--pred", &p(d, "p.trees"), "--run-json", &p(d, "r.json")]);
    let removed = ok(&["eval", "--gold", &p(d, "g.trees"), "--pred", &p(d, "p.trees"), "--strip-punct", "--run-json", &p(d, "r.json")]);
    assert!(kept.contains("punctuation=kept") && !kept.contains("macro_f1: 100.00"), "{kept}");
    assert!(removed.contains("punctuation=removed") && removed.contains("macro_f1: 100.00"), "{removed}");
}
