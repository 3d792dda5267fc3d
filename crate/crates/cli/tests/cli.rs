use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bernoulli_sets::data::{load_params, write_predictions, Dataset, DatasetRecord, Meta};
use bernoulli_sets::{ProbabilityVector, SecondOrderPrediction};
use serde_json::Value;
use tempfile::TempDir;

fn bps(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bps"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = bps(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    bps(dir, args).status.code().expect("exit code")
}

fn single_vertex_file(dir: &Path, name: &str, rows: &[(&[f64], Option<usize>)]) -> PathBuf {
    let k = rows[0].0.len();
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, (p, y))| DatasetRecord {
            label: *y,
            ..DatasetRecord::new(
                format!("r{i}"),
                SecondOrderPrediction::single(ProbabilityVector::from_slice(p).unwrap()),
            )
        })
        .collect();
    let ds = Dataset::new(k, Meta::new(), records).unwrap();
    let path = dir.join(name);
    write_predictions(fs::File::create(&path).unwrap(), &ds).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn b_vectors(path: &Path) -> Vec<Vec<f64>> {
    load_params(fs::read(path).unwrap().as_slice())
        .unwrap()
        .rows
        .into_iter()
        .map(|r| r.b.to_vec())
        .collect()
}

#[test]
fn calibrate_hand_built_file() {
    let dir = TempDir::new().unwrap();
    let p: &[f64] = &[0.5, 0.2, 0.3];
    let mut rows = vec![(p, Some(0)); 5];
    rows.extend(vec![(p, Some(2)); 4]);
    single_vertex_file(dir.path(), "cal.jsonl", &rows);
    ok(dir.path(), &["calibrate", "--in", "cal.jsonl", "--out", "cal.json"]);
    let doc = json(&dir.path().join("cal.json"));
    let t = doc["t_star"].as_f64().unwrap();
    assert!((t - 0.8).abs() <= 1e-6, "{t}");
    assert_eq!(doc["saturated"], false);
    assert_eq!(doc["required"], 9);
    assert!(!doc["trace"].as_array().unwrap().is_empty());
    assert_eq!(doc["input_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn nominal_mode_skips_search() {
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "cal.jsonl", &[(&[0.5, 0.5], Some(0))]);
    ok(dir.path(), &["calibrate", "--in", "cal.jsonl", "--mode", "bps-nom", "--out", "c.json"]);
    let doc = json(&dir.path().join("c.json"));
    assert_eq!(doc["t_star"].as_f64().unwrap(), 1.0 - 0.1);
    assert_eq!(doc["iterations"], 0);
    assert!(doc["trace"].as_array().unwrap().is_empty());
}

#[test]
fn conservative_floor() {
    // b_0 = min(2t, 1) on [0.5, 0.5] with label 0: 91 of 100 needs t = 0.455
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "cal.jsonl", &vec![(&[0.5, 0.5][..], Some(0)); 100]);
    ok(dir.path(), &["calibrate", "--in", "cal.jsonl", "--out", "raw.json"]);
    ok(dir.path(), &["calibrate", "--in", "cal.jsonl", "--conservative", "--out", "cons.json"]);
    let raw = json(&dir.path().join("raw.json"));
    let cons = json(&dir.path().join("cons.json"));
    assert!((raw["t_cp"].as_f64().unwrap() - 0.455).abs() <= 1e-6);
    assert_eq!(cons["t_star"].as_f64().unwrap(), 1.0 - 0.1);
    assert_eq!(cons["t_cp"], raw["t_cp"]);
    assert_eq!(cons["conservative"], true);
}

#[test]
fn calibration_needs_labels() {
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "x.jsonl", &[(&[0.5, 0.5], None)]);
    assert_eq!(code(dir.path(), &["calibrate", "--in", "x.jsonl"]), 3);
}

#[test]
fn predict_examples() {
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "x.jsonl", &[(&[0.5, 0.2, 0.3], None), (&[0.1, 0.6, 0.3], None)]);
    ok(dir.path(), &["predict", "--in", "x.jsonl", "--t", "0.9", "--out", "b.jsonl"]);
    let b = &b_vectors(&dir.path().join("b.jsonl"))[0];
    for (got, want) in b.iter().zip([1.0, 0.5, 1.0]) {
        assert!((got - want).abs() <= 1e-12, "{b:?}");
    }

    ok(dir.path(), &["predict", "--in", "x.jsonl", "--t", "0", "--out", "zero.jsonl"]);
    for b in b_vectors(&dir.path().join("zero.jsonl")) {
        assert!(b.iter().all(|&x| x == 0.0));
    }

    ok(dir.path(), &["predict", "--in", "x.jsonl", "--t", "0.73", "--mode", "bps", "--out", "bps.jsonl"]);
    ok(dir.path(), &["predict", "--in", "x.jsonl", "--t", "0.73", "--mode", "aps", "--out", "aps.jsonl"]);
    assert_eq!(b_vectors(&dir.path().join("bps.jsonl")), b_vectors(&dir.path().join("aps.jsonl")));
}

#[test]
fn predict_rejects_mismatched_calibration() {
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "cal.jsonl", &[(&[0.5, 0.5][..], Some(0)); 30]);
    single_vertex_file(dir.path(), "x3.jsonl", &[(&[0.5, 0.2, 0.3], None)]);
    ok(dir.path(), &["calibrate", "--in", "cal.jsonl", "--out", "c.json"]);
    assert_eq!(code(dir.path(), &["predict", "--in", "x3.jsonl", "--calibration", "c.json"]), 3);
    assert_eq!(code(dir.path(), &["predict", "--in", "x3.jsonl", "--mode", "aps"]), 3);
    assert_eq!(code(dir.path(), &["predict", "--in", "x3.jsonl", "--t", "1.5"]), 3);
}

#[test]
fn sampling_is_seeded() {
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "x.jsonl", &vec![(&[0.4, 0.3, 0.3][..], None); 50]);
    let run = |seed: &str, out: &str| {
        ok(dir.path(), &["predict", "--in", "x.jsonl", "--t", "0.5", "--sample", "--seed", seed, "--out", out]);
        fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("1", "a.jsonl");
    assert_eq!(a, run("1", "b.jsonl"));
    assert_ne!(a, run("2", "c.jsonl"));
    let file = load_params(a.as_slice()).unwrap();
    assert!(file.rows.iter().all(|r| r.set.is_some()));
}

#[test]
fn evaluate_full_sets_and_single_record() {
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "truth.jsonl", &[(&[0.5, 0.2, 0.3], Some(1)), (&[0.2, 0.2, 0.6], Some(2))]);
    ok(dir.path(), &["predict", "--in", "truth.jsonl", "--t", "1", "--out", "full.jsonl"]);
    ok(dir.path(), &["evaluate", "--params", "full.jsonl", "--truth", "truth.jsonl", "--out", "m.json"]);
    let m = json(&dir.path().join("m.json"));
    assert_eq!(m["marginal_coverage"], 1.0);
    assert_eq!(m["set_size"], 3.0);
    assert!(dir.path().join("m.heatmap.csv").exists());

    single_vertex_file(dir.path(), "one.jsonl", &[(&[0.5, 0.2, 0.3], Some(2))]);
    ok(dir.path(), &["predict", "--in", "one.jsonl", "--t", "0.9", "--out", "one_b.jsonl"]);
    let out = ok(
        dir.path(),
        &["evaluate", "--params", "one_b.jsonl", "--truth", "one.jsonl", "--out", "one.json"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("EUSC"));
    let m = json(&dir.path().join("one.json"));
    for key in ["marginal_coverage", "ssc_worst", "eusc_worst"] {
        assert_eq!(m[key], 1.0, "{key}");
    }
    assert_eq!(m["set_size"], 2.5);
}

#[test]
fn evaluate_rejects_id_mismatch() {
    let dir = TempDir::new().unwrap();
    single_vertex_file(dir.path(), "a.jsonl", &[(&[0.5, 0.5], Some(0))]);
    single_vertex_file(dir.path(), "b.jsonl", &[(&[0.5, 0.5], Some(0)), (&[0.5, 0.5], Some(1))]);
    ok(dir.path(), &["predict", "--in", "a.jsonl", "--t", "0.5", "--out", "pa.jsonl"]);
    assert_eq!(code(dir.path(), &["evaluate", "--params", "pa.jsonl", "--truth", "b.jsonl"]), 3);
}

#[test]
fn tv_pipeline_bps_keeps_conditional_coverage() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--generator", "tv", "--n", "1000", "--d", "0.2", "--out", "tv.jsonl"]);
    ok(d, &["predict", "--in", "tv.jsonl", "--mode", "bps-nom", "--out", "bps.jsonl"]);
    ok(d, &["predict", "--in", "tv.centers.jsonl", "--mode", "aps-nom", "--out", "aps.jsonl"]);
    ok(d, &["evaluate", "--params", "bps.jsonl", "--truth", "tv.jsonl", "--out", "bps.json"]);
    ok(d, &["evaluate", "--params", "aps.jsonl", "--truth", "tv.centers.jsonl", "--out", "aps.json"]);
    let b = json(&d.join("bps.json"));
    let a = json(&d.join("aps.json"));
    assert_eq!(b["conditional_violation_fraction"], 0.0);
    assert!(b["conditional_min"].as_f64().unwrap() >= 0.9 - 1e-9);
    assert!(a["conditional_violation_fraction"].as_f64().unwrap() > 0.0);
    assert!(b["set_size"].as_f64().unwrap() >= a["set_size"].as_f64().unwrap());
}

#[test]
fn synth_is_deterministic_and_validated() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--generator", "tv", "--n", "1000", "--d", "0.1", "--k", "3", "--seed", "0", "--out", "a.jsonl"]);
    ok(d, &["synth", "--generator", "tv", "--n", "1000", "--d", "0.1", "--k", "3", "--seed", "0", "--out", "b.jsonl"]);
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(
        fs::read(d.join("a.centers.jsonl")).unwrap(),
        fs::read(d.join("b.centers.jsonl")).unwrap()
    );

    let out = ok(d, &["synth", "--generator", "aps-synth", "--out", "aps.jsonl"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("softmax"));
    let text = fs::read_to_string(d.join("aps.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4001);
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["meta"]["n"], 4000);
    assert_eq!(header["meta"]["seed"], 0);

    assert_eq!(code(d, &["synth", "--generator", "tv", "--n", "0", "--out", "z.jsonl"]), 3);
    assert_eq!(code(d, &["synth", "--generator", "tv", "--d", "1.5", "--out", "z.jsonl"]), 3);
}

fn vertex_rows(stdout: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn as_vec(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn vertices_examples() {
    let dir = TempDir::new().unwrap();
    let rows = vertex_rows(&ok(dir.path(), &["vertices", "--p", "0.5,0.2,0.3", "--d", "0.25"]).stdout);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| {
        let v = as_vec(&r["vertex"]);
        (v[0] - 0.7).abs() < 1e-12 && v[1] == 0.0 && (v[2] - 0.3).abs() < 1e-12
    }));

    let rows = vertex_rows(&ok(dir.path(), &["vertices", "--p", "0.5,0.2,0.3", "--d", "1e-6"]).stdout);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!((r["eta"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert!((r["tv"].as_f64().unwrap() - 1e-6).abs() < 1e-15);
    }

    let rows = vertex_rows(&ok(dir.path(), &["vertices", "--p", "1,0,0", "--d", "0.3"]).stdout);
    for r in &rows {
        let v = as_vec(&r["vertex"]);
        assert!(v[0] >= 0.7 - 1e-12);
    }
    let distinct: std::collections::BTreeSet<String> = rows.iter().map(|r| r["vertex"].to_string()).collect();
    assert_eq!(distinct.len(), rows.len());

    assert_eq!(code(dir.path(), &["vertices", "--p", "0.5,0.6", "--d", "0.1"]), 3);
    assert_eq!(code(dir.path(), &["vertices", "--p", "0.5,0.5", "--d", "0"]), 3);
}

#[test]
fn depth_runs_on_tv_data() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--generator", "tv", "--n", "20", "--out", "tv.jsonl"]);
    let out = ok(dir.path(), &["depth", "--in", "tv.jsonl", "--directions", "200", "--hull-samples", "50"]);
    let rows = vertex_rows(&out.stdout);
    assert_eq!(rows.len(), 20);
    for r in rows {
        let depth = r["depth"].as_f64().unwrap();
        assert!((0.0..=0.5 + 1e-12).contains(&depth), "{depth}");
    }
}

#[test]
fn parallelism_does_not_change_bytes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--generator", "tv", "--n", "300", "--d", "0.15", "--seed", "4", "--out", "tv.jsonl"]);
    for jobs in ["1", "4"] {
        ok(d, &["calibrate", "--in", "tv.jsonl", "--jobs", jobs, "--out", &format!("c{jobs}.json")]);
        ok(
            d,
            &["predict", "--in", "tv.jsonl", "--calibration", &format!("c{jobs}.json"), "--jobs", jobs, "--out", &format!("p{jobs}.jsonl")],
        );
    }
    assert_eq!(fs::read(d.join("c1.json")).unwrap(), fs::read(d.join("c4.json")).unwrap());
    let strip = |name: &str| {
        let mut file = load_params(fs::read(d.join(name)).unwrap().as_slice()).unwrap();
        file.meta.remove("calibration_sha256");
        file
    };
    assert_eq!(strip("p1.jsonl"), strip("p4.jsonl"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["calibrate", "--in", "missing.jsonl"]), 4);
    assert_eq!(code(d, &["calibrate"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    fs::write(d.join("bad.jsonl"), "{\"k\": 2}\n{\"id\": \"a\", \"preds\": [[0.9, 0.9]], \"label\": 0}\n").unwrap();
    let out = bps(d, &["calibrate", "--in", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    single_vertex_file(d, "four.jsonl", &[(&[0.5, 0.5][..], Some(0)); 4]);
    let out = bps(d, &["calibrate", "--in", "four.jsonl", "--out", "c.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("saturated"));
    assert_eq!(code(d, &["calibrate", "--in", "four.jsonl", "--fail-on-saturation", "--out", "c.json"]), 5);
    assert_eq!(json(&d.join("c.json"))["saturated"], true);
}
