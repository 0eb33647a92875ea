mod common;

use common::*;
use tempfile::tempdir;

#[test]
fn synth_is_byte_for_byte_repeatable() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let args = |d| vec!["--seed", "7", "synth", "--exercise", "plank,tree", "--reps", "4", "--clips", "2", "--noise", "0.02", "--out", d];
    let first = ok(&args(p(a.path())));
    let second = ok(&args(p(b.path())));
    assert_eq!(first.stdout, second.stdout);
    let files = snapshot(a.path());
    assert_eq!(files, snapshot(b.path()));
    assert_eq!(files.iter().filter(|(f, _)| f.ends_with(".csv")).count(), 12);

    let summary = first.json();
    let list = summary["exercises"].as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["exercise"], "plank");
    assert_eq!(list[0]["manifest"], "plank/manifest.json");
    assert_eq!(list[0]["clips"], 6);
}

#[test]
fn seeds_change_the_data() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    ok(&["--seed", "1", "synth", "--exercise", "plank", "--reps", "2", "--noise", "0.02", "--out", p(a.path())]);
    ok(&["--seed", "2", "synth", "--exercise", "plank", "--reps", "2", "--noise", "0.02", "--out", p(b.path())]);
    assert_ne!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn usage_errors_exit_one_with_a_json_error() {
    for args in [
        vec!["synth", "--bogus"],
        vec!["frobnicate"],
        vec!["synth", "--out", "x", "--reps", "0"],
        vec!["synth", "--out", "x", "--class", "3"],
        vec!["synth", "--out", "x", "--exercise", "handstand"],
        vec!["synth", "--out", "x", "--noise", "-1"],
        vec!["eval", "--predictions", "p.jsonl", "--tau", "2"],
        vec!["eval", "--from-clips", "--manifest", "m.json", "--test-fraction", "1.5"],
        vec!["eval", "--predictions", "p.jsonl", "--model", "m.json"],
        vec!["train", "--features", "f.csv", "--exercise", "plank", "--out", "m.json", "--momentum", "1"],
    ] {
        let o = isoform(&args);
        assert_eq!(o.code, 1, "{args:?}: {}", o.stderr);
        assert!(o.stdout.is_empty(), "{args:?}");
        let err: serde_json::Value = serde_json::from_str(o.stderr.trim()).unwrap();
        assert!(err["error"]["message"].is_string());
    }
}

#[test]
fn help_goes_to_stdout() {
    let o = isoform(&["--help"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("synth"));
    assert!(o.stderr.is_empty());
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = isoform(&["segment", "--manifest", p(&missing)]);
    assert_eq!((o.code, o.error_code().as_str()), (2, "io"));

    let model = dir.path().join("model.json");
    std::fs::write(&model, r#"{"exercise":"plank"}"#).unwrap();
    let features = dir.path().join("f.csv");
    std::fs::write(&features, "clip_id,rep_idx,class_idx,f_1\n").unwrap();
    let o = isoform(&["eval", "--model", p(&model), "--features", p(&features)]);
    assert_eq!((o.code, o.error_code().as_str()), (2, "invalid_model"));
}

#[test]
fn noise_free_data_scores_perfectly() {
    let dir = tempdir().unwrap();
    ok(&["synth", "--exercise", "warrior2", "--reps", "12", "--clips", "2", "--out", p(dir.path())]);
    let manifest = dir.path().join("warrior2/manifest.json");
    let s = ok(&["eval", "--from-clips", "--manifest", p(&manifest)]).json();
    assert_eq!(s["multiclass_f1"], 1.0);
    assert_eq!(s["m1"], 1.0);
    assert_eq!(s["m2"], 1.0);
    assert_eq!(s["m3_percent"], 0.0);
    assert_eq!(s["counts"]["total"], 36);
}

#[test]
fn staged_commands_match_the_one_shot_run() {
    let dir = tempdir().unwrap();
    let d = |f: &str| dir.path().join(f);
    ok(&["--seed", "3", "synth", "--exercise", "tree", "--reps", "16", "--clips", "2", "--noise", "0.01", "--out", p(dir.path())]);
    let manifest = d("tree/manifest.json");

    ok(&["segment", "--manifest", p(&manifest), "--out", p(&d("seg.jsonl"))]);
    ok(&["featurize", "--manifest", p(&manifest), "--segments", p(&d("seg.jsonl")), "--out", p(&d("feat.csv"))]);
    ok(&["--seed", "5", "train", "--features", p(&d("feat.csv")), "--exercise", "tree", "--out", p(&d("model.json")), "--test-fraction", "0.25"]);
    let staged = ok(&[
        "--seed", "5", "eval", "--model", p(&d("model.json")), "--features", p(&d("feat.csv")),
        "--test-fraction", "0.25", "--predictions-out", p(&d("staged.jsonl")),
    ]);
    let direct = ok(&[
        "--seed", "5", "eval", "--from-clips", "--manifest", p(&manifest), "--test-fraction", "0.25",
        "--predictions-out", p(&d("direct.jsonl")), "--model-out", p(&d("direct_model.json")),
    ]);
    assert_eq!(staged.stdout, direct.stdout);
    assert_eq!(std::fs::read(d("staged.jsonl")).unwrap(), std::fs::read(d("direct.jsonl")).unwrap());
    assert_eq!(std::fs::read(d("model.json")).unwrap(), std::fs::read(d("direct_model.json")).unwrap());

    // The same scores again from the prediction dump alone.
    let rescored = ok(&["eval", "--predictions", p(&d("staged.jsonl"))]);
    assert_eq!(rescored.stdout, staged.stdout);

    // And through segment/featurize on stdout.
    let seg = ok(&["segment", "--manifest", p(&manifest)]);
    assert_eq!(seg.stdout, std::fs::read_to_string(d("seg.jsonl")).unwrap());
}

#[test]
fn eval_from_a_manifest_reuses_the_model_settings() {
    let dir = tempdir().unwrap();
    let d = |f: &str| dir.path().join(f);
    ok(&["synth", "--exercise", "plank", "--reps", "12", "--clips", "2", "--noise", "0.01", "--out", p(dir.path())]);
    let manifest = d("plank/manifest.json");
    ok(&["segment", "--manifest", p(&manifest), "--out", p(&d("seg.jsonl"))]);
    ok(&["featurize", "--manifest", p(&manifest), "--segments", p(&d("seg.jsonl")), "--out", p(&d("feat.csv"))]);
    ok(&["train", "--features", p(&d("feat.csv")), "--exercise", "plank", "--out", p(&d("model.json"))]);
    let a = ok(&["eval", "--model", p(&d("model.json")), "--features", p(&d("feat.csv"))]);
    let b = ok(&["eval", "--model", p(&d("model.json")), "--manifest", p(&manifest)]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"exercise": "plank", "reps": 3, "class": [0, 2], "noise": 0.0, "pretty": true}"#).unwrap();
    let out = dir.path().join("a");
    let o = ok(&["--config", p(&cfg), "synth", "--out", p(&out)]);
    assert!(o.stdout.contains("\n  "), "pretty output expected");
    let s = o.json();
    assert_eq!(s["exercises"][0]["exercise"], "plank");
    assert_eq!(s["exercises"][0]["clips"], 2);
    let csvs = snapshot(&out).into_iter().filter(|(f, _)| f.ends_with(".csv")).count();
    assert_eq!(csvs, 2);

    // Flags on the command line beat the file.
    let out = dir.path().join("b");
    let s = ok(&["synth", "--config", p(&cfg), "--exercise", "tree", "--out", p(&out)]).json();
    assert_eq!(s["exercises"][0]["exercise"], "tree");

    std::fs::write(&cfg, "[1, 2]").unwrap();
    let o = isoform(&["--config", p(&cfg), "synth", "--out", p(&out)]);
    assert_eq!((o.code, o.error_code().as_str()), (1, "bad_config"));
}

#[test]
fn replay_prints_protocol_messages() {
    let dir = tempdir().unwrap();
    let d = |f: &str| dir.path().join(f);
    ok(&["synth", "--exercise", "plank", "--reps", "12", "--clips", "2", "--noise", "0.01", "--out", p(dir.path())]);
    ok(&[
        "eval", "--from-clips", "--manifest", p(&d("plank/manifest.json")),
        "--model-out", p(&d("models/plank.json")),
    ]);
    let csv = d("plank/correct/clip_0000.csv");

    let lines = ok(&["replay", "--csv", p(&csv), "--model", p(&d("models/plank.json"))]).lines();
    let (report, body) = lines.split_last().unwrap();
    assert_eq!(body[0]["t"], "ack");
    let reps: Vec<_> = body[1..].iter().filter(|m| m["t"] == "rep").collect();
    assert_eq!(reps.len(), 6);
    assert!(reps.iter().all(|r| r["verdict"] == "correct"));
    assert_eq!(report["t"], "report");
    assert_eq!(report["exercise"], "plank");
    assert_eq!(report["totals"]["correct"], 6);

    // Exercise inferred from the path, model looked up in the directory.
    let again = ok(&["replay", "--csv", p(&csv), "--models", p(&d("models"))]);
    assert_eq!(again.lines(), lines);

    let o = isoform(&["replay", "--csv", p(&csv), "--models", p(&d("models")), "--exercise", "tree"]);
    assert_eq!(o.code, 2);
}
