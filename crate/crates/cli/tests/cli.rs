use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use foramslice_core::volume_io::{extract_slice, load_volume, Manifest};
use foramslice_core::Axis;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foramslice"))
        .args(args)
        .output()
        .expect("spawn foramslice")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantom(dir: &Path) -> String {
    ok(&["phantom", "--out", s(dir), "--dims", "64,64,32"]);
    s(&dir.join("manifest.tsv")).to_string()
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(run(&["split", "--nope"]).status.code(), Some(2));
    assert_eq!(run(&["--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["metric", "--kind", "psnr", "a.png", "b.png"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let out = run(&["eval", "--pred", "/nonexistent/p.tsv", "--labels", "/nonexistent/l.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn split_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["split", "--manifest", &manifest, "--seed", "42", "--out", s(&a)]);
    ok(&["split", "--manifest", &manifest, "--seed", "42", "--out", s(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    let v: Value = serde_json::from_str(&text).unwrap();
    let assigned = v["assignments"].as_object().unwrap();
    assert_eq!(assigned.len(), 5);
    for split in assigned.values() {
        assert!(["train", "val", "test"].contains(&split.as_str().unwrap()));
    }
}

#[test]
fn eval_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("p.tsv");
    let labels = dir.path().join("l.tsv");
    let row = |hot: usize| {
        (0..12)
            .map(|i| if i == hot { "0.9" } else { "0.0090909" })
            .collect::<Vec<_>>()
            .join("\t")
    };
    fs::write(&pred, format!("a\t{}\nb\t{}\nc\t{}\n", row(8), row(3), row(3))).unwrap();
    fs::write(&labels, "a\tLockhartia\nb\tBaculogypsina\nc\tLockhartia\n").unwrap();
    let out = ok(&["eval", "--pred", s(&pred), "--labels", s(&labels), "--json"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["n_records"], 3);
    assert!((v["accuracy"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(v["per_class"].as_array().unwrap().len(), 12);

    let md = ok(&["eval", "--pred", s(&pred), "--labels", s(&labels)]);
    assert!(md.contains("Lockhartia"));
}

#[test]
fn classify_batch_combines_tables() {
    let dir = tempfile::tempdir().unwrap();
    let row = |hot: usize| {
        (0..12)
            .map(|i| if i == hot { "0.78" } else { "0.02" })
            .collect::<Vec<_>>()
            .join("\t")
    };
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    fs::write(&a, format!("x\t{}\n", row(8))).unwrap();
    fs::write(&b, format!("x\t{}\n", row(8))).unwrap();
    let out = dir.path().join("combined.tsv");
    let stdout = ok(&[
        "classify",
        "--pred",
        &format!("m1={}", s(&a)),
        "--pred",
        &format!("m2={}", s(&b)),
        "--majority",
        "--out",
        s(&out),
        "--json",
    ]);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v[0]["slice_id"], "x");
    assert_eq!(v[0]["top"][0]["label"], "Lockhartia");
    let table = fs::read_to_string(&out).unwrap();
    assert!(table.starts_with("slice_id\tAlveolina"));
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn pipeline_finds_query_slice() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = phantom(d);

    let ingest = ok(&["ingest", "--manifest", &manifest, "--json"]);
    let volumes: Value = serde_json::from_str(&ingest).unwrap();
    assert_eq!(volumes["volumes"].as_array().map(Vec::len), Some(5));
    assert!(volumes["failures"].as_array().unwrap().is_empty());

    let index = d.join("index.bin");
    ok(&["index", "--manifest", &manifest, "--out", s(&index)]);
    assert!(index.exists());

    // The matcher frames raw slices itself, so the query is an unprocessed slice.
    let m = Manifest::load(d.join("manifest.tsv")).unwrap();
    let entry = m.entries.iter().find(|e| e.specimen_id == "V2").unwrap();
    let volume = load_volume(&m.resolve(entry), entry).unwrap();
    let query = d.join("V2_Z_0016.png");
    extract_slice(&volume, Axis::Z, 16).unwrap().save_png(&query).unwrap();
    let query = s(&query);

    let out = ok(&["match", "--query", query, "--corpus", s(&index), "--topk", "3", "--json"]);
    let results: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(results.as_array().unwrap().len(), 3);
    let top = &results[0];
    assert_eq!(top["volume_id"], "V2");
    assert_eq!(top["axis"], "Z");
    assert_eq!(top["slice_index"], 16);
    assert_eq!(top["best_rotation"], 0.0);

    let only = ok(&["match", "--query", query, "--corpus", s(&index), "--subset", "V4", "--json"]);
    let only: Value = serde_json::from_str(&only).unwrap();
    assert!(only.as_array().unwrap().iter().all(|r| r["volume_id"] == "V4"));

    let bad = run(&["match", "--query", query, "--corpus", s(&index), "--subset", "V9"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn metric_prints_json_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d);
    let slices = d.join("slices");
    let lines = ok(&["preprocess", "--in", s(&d.join("V1.nii")), "--out", s(&slices), "--size", "48"]);
    let kept: Value = lines
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|r| r["output"].is_string())
        .unwrap();
    let p = kept["output"].as_str().unwrap();
    let out = ok(&["metric", "--kind", "ssim", p, p]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["valid"], true);
    assert!((v["value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}
