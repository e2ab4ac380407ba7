use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tmascore(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmascore"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = tmascore(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Small corpus: 6 primary and 3 auxiliary images per class, 32x32.
fn corpus(dir: &Path) {
    let mut spec: Value = serde_json::from_str(include_str!("../../core/data/benchmark_spec.json")).unwrap();
    spec["image_size"] = 32.into();
    spec["images_per_class"] = 6.into();
    for src in spec["sources"].as_array_mut().unwrap() {
        src["images_per_class"] = 3.into();
    }
    fs::write(dir.join("spec.json"), spec.to_string()).unwrap();
    ok(&["synth", "--spec", "spec.json", "--out", "corpus", "--seed", "5"], dir);
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn extract_writes_2601_feature_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let before = fs::read(d.join("corpus/primary.csv")).unwrap();
    ok(
        &["extract", "--manifest", "corpus/primary.csv", "--levels", "51", "--direction", "45", "--distance", "1", "--out", "feats.csv"],
        d,
    );
    assert_eq!(fs::read(d.join("corpus/primary.csv")).unwrap(), before);
    let text = fs::read_to_string(d.join("feats.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..4], &["path", "label", "source", "f0"]);
    assert_eq!(header.len() - 3, 2601);
    assert_eq!(lines.count(), 24);
}

#[test]
fn transfer_score_without_aux_has_equal_arms() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    ok(&["transfer-score", "--train-manifest", "corpus/primary.csv", "--runs", "3", "--trees", "20", "--out", "r.json"], d);
    let report = read_json(&d.join("r.json"));
    let r = &report["report"];
    assert_eq!(r["runs"], 3);
    assert_eq!(r["accuracy_with_transfer"], r["accuracy_without_transfer"]);
    for run in r["run_records"].as_array().unwrap() {
        assert_eq!(run["accuracy_with_transfer"], run["accuracy_without_transfer"]);
        assert_eq!(run["transferred"], 0);
    }
    assert_eq!(report["config"]["transfer"]["beta"], 0.1);
}

#[test]
fn transfer_score_reads_feature_tables_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    ok(&["extract", "--manifest", "corpus/primary.csv", "--out", "p.csv"], d);
    ok(&["extract", "--manifest", "corpus/aux_a.csv", "--out", "a.csv"], d);
    let args = |out: &'static str| {
        vec![
            "transfer-score", "--train-manifest", "p.csv", "--aux-manifest", "aux_a=a.csv", "--runs", "2", "--trees", "25",
            "--seed", "3", "--pooled-baseline", "--out", out,
        ]
    };
    ok(&args("x.json"), d);
    ok(&args("y.json"), d);
    assert_eq!(fs::read(d.join("x.json")).unwrap(), fs::read(d.join("y.json")).unwrap());
    let r = read_json(&d.join("x.json"));
    assert!(r["report"]["accuracy_pooled"]["mean"].is_number());
    assert_eq!(r["report"]["sources"][0]["name"], "aux_a");

    // Same answer when features are extracted on the fly from manifests.
    let from_images = [
        "transfer-score", "--train-manifest", "corpus/primary.csv", "--aux-manifest", "aux_a=corpus/aux_a.csv", "--runs", "2",
        "--trees", "25", "--seed", "3", "--pooled-baseline", "--out", "z.json",
    ];
    ok(&from_images, d);
    let z = read_json(&d.join("z.json"));
    assert_eq!(z["report"]["accuracy_with_transfer"], r["report"]["accuracy_with_transfer"]);
}

#[test]
fn fixed_test_manifest_is_supported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    ok(
        &[
            "transfer-score", "--train-manifest", "corpus/aux_a.csv", "--test-manifest", "corpus/primary.csv", "--aux-manifest",
            "aux_b=corpus/aux_b.csv", "--trees", "10", "--out", "r.json",
        ],
        d,
    );
    let r = read_json(&d.join("r.json"));
    assert_eq!(r["report"]["run_records"][0]["test_size"], 24);
    assert!(r["config"]["split"].is_null());
}

#[test]
fn train_evaluate_and_pca_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    ok(&["extract", "--manifest", "corpus/primary.csv", "--out", "p.csv"], d);
    ok(&["extract", "--manifest", "corpus/aux_a.csv", "--out", "a.csv"], d);

    let out = tmascore(&["train", "--features", "p.csv", "--trees", "15", "--test-features", "a.csv", "--out", "m.json"], d);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("accuracy "));
    let model = read_json(&d.join("m.json"));
    assert_eq!(model["format"], "tmascore-forest");
    assert_eq!(model["forest"]["trees"].as_array().unwrap().len(), 15);

    ok(&["evaluate", "--features", "p.csv", "--out", "e.json"], d);
    let e = read_json(&d.join("e.json"));
    assert!(e["rho"].as_f64().unwrap() > 0.0);
    assert_eq!(e["pairs"].as_array().unwrap().len(), 6);

    ok(&["pca-export", "--features", "p.csv", "a.csv", "--out", "pca.csv"], d);
    let csv = fs::read_to_string(d.join("pca.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("path,label,source,pc1,pc2"));
    assert_eq!(csv.lines().count(), 1 + 24 + 12);
    let side = read_json(&d.join("pca.json"));
    assert_eq!(side["explained_variance"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(tmascore(&["--help"], d).status.code(), Some(0));
    assert_eq!(tmascore(&["extract", "--help"], d).status.code(), Some(0));
    assert_eq!(tmascore(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(tmascore(&["extract", "--bogus"], d).status.code(), Some(1));
    assert_eq!(tmascore(&["extract", "--manifest", "m.csv"], d).status.code(), Some(1));
    assert_eq!(tmascore(&["extract", "--manifest", "missing.csv", "--out", "f.csv"], d).status.code(), Some(2));

    fs::write(d.join("bad.csv"), "path,label,source\nx.png,7,s\n").unwrap();
    let out = tmascore(&["extract", "--manifest", "bad.csv", "--out", "f.csv"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    fs::write(d.join("gone.csv"), "path,label,source\nnot_there.png,1,s\n").unwrap();
    assert_eq!(tmascore(&["extract", "--manifest", "gone.csv", "--out", "f.csv"], d).status.code(), Some(2));

    let bad_flags = ["transfer-score", "--train-manifest", "t.csv", "--aux-manifest", "nameless", "--out", "r.json"];
    assert_eq!(tmascore(&bad_flags, d).status.code(), Some(1));
    let conflict = ["transfer-score", "--train-manifest", "t.csv", "--test-manifest", "u.csv", "--split", "0.3", "--out", "r.json"];
    assert_eq!(tmascore(&conflict, d).status.code(), Some(1));
    assert_eq!(tmascore(&["--threads", "0", "synth", "--out", "x"], d).status.code(), Some(1));
}
