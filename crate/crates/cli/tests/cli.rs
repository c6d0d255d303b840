use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcl_core::data::{write_jsonl, RawRecord};
use dcl_core::synthetic;

fn dcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes separable train/valid/test files and a config naming them.
fn toy_setup(dir: &Path, mode: &str, extra: &str) -> PathBuf {
    write_jsonl(&dir.join("train.jsonl"), &synthetic::separable(3, 40)).unwrap();
    write_jsonl(&dir.join("valid.jsonl"), &synthetic::separable(3, 5)).unwrap();
    write_jsonl(&dir.join("test.jsonl"), &synthetic::separable(3, 10)).unwrap();
    let cfg = dir.join("run.conf");
    fs::write(
        &cfg,
        format!(
            "# toy run\nmode = {mode}\ntrain = train.jsonl\nvalid = valid.jsonl\ntest = test.jsonl\n\
             min_count = 1\ndim = 8\nlearning_rate = 0.5\nbatch_size = 8\nepochs = 5\nseed = 11\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

fn train(dir: &Path, cfg: &Path, out: &str, extra: &[&str]) -> Output {
    let out_dir = dir.join(out);
    let mut args = vec!["train", "--config", s(cfg), "--out-dir", s(&out_dir)];
    args.extend_from_slice(extra);
    dcl(&args)
}

#[test]
fn convert_banking_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("train.csv");
    fs::write(&csv, "text,category\nI lost my card,lost_card\n\"where is it, please\",card_arrival\n").unwrap();
    let out = dir.path().join("train.jsonl");
    let o = dcl(&["convert", s(&csv), "--format", "banking77-csv", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("2 records, 2 labels"));
    let back = dcl_core::data::ingest_jsonl(&out).unwrap();
    assert_eq!(back[1], RawRecord::new("where is it, please", "card_arrival"));
}

#[test]
fn convert_jsonl_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    write_jsonl(&a, &synthetic::separable(2, 3)).unwrap();
    assert!(dcl(&["convert", s(&a), "--format", "jsonl", "-o", s(&b)]).status.success());
    assert!(dcl(&["convert", s(&b), "--format", "jsonl", "-o", s(&c)]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(&b).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn convert_clinc_sections() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("data_full.json");
    fs::write(
        &json,
        r#"{"train":[["hi there","greeting"],["bye","goodbye"]],"val":[["hello","greeting"]],
            "test":[["see you","goodbye"]],"oos_train":[["what","oos"]]}"#,
    )
    .unwrap();
    let out = dir.path().join("all.jsonl");
    let o = dcl(&["convert", s(&json), "--format", "clinc150-json", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("4 records, 2 labels"));
    let o = dcl(&["convert", s(&json), "--format", "clinc150-json", "--sections", "val", "-o", s(&out)]);
    assert!(stdout(&o).starts_with("1 records"));
}

#[test]
fn usage_errors_exit_one() {
    let o = dcl(&["convert", "x", "--format", "xml", "-o", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(dcl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dcl(&["train"]).status.code(), Some(1));
    assert_eq!(dcl(&["--help"]).status.code(), Some(0));
}

#[test]
fn parse_failures_report_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"text\":\"a\",\"label\":\"x\"}\nnot json\n").unwrap();
    let o = dcl(&["convert", s(&bad), "--format", "jsonl", "-o", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn baseline_train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "baseline", "");
    let o = train(dir.path(), &cfg, "run", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert_eq!(line.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["accuracy"], 100.0);
    for f in ["manifest.json", "metrics.json", "epochs.jsonl", "checkpoint.json"] {
        assert!(dir.path().join("run").join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["checksums"].as_object().unwrap().len(), 3);
    assert_eq!(manifest["vocab_size"], 3);
}

#[test]
fn curriculum_schedule_has_one_line_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "curriculum", "");
    let o = train(dir.path(), &cfg, "run", &["--k", "3", "--theta", "60", "--lambda", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let schedule = fs::read_to_string(dir.path().join("run/schedule.jsonl")).unwrap();
    assert_eq!(schedule.lines().count(), 5);
    let assignment = fs::read_to_string(dir.path().join("run/assignment.jsonl")).unwrap();
    assert_eq!(assignment.lines().count(), 5 * 120);
}

#[test]
fn repeated_runs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "curriculum", "");
    assert!(train(dir.path(), &cfg, "a", &[]).status.success());
    assert!(train(dir.path(), &cfg, "b", &[]).status.success());
    assert_eq!(
        fs::read(dir.path().join("a/metrics.json")).unwrap(),
        fs::read(dir.path().join("b/metrics.json")).unwrap()
    );
    let c = train(dir.path(), &cfg, "c", &["--seed", "12"]);
    assert!(c.status.success());
    assert_ne!(
        fs::read(dir.path().join("a/metrics.json")).unwrap(),
        fs::read(dir.path().join("c/metrics.json")).unwrap()
    );
}

#[test]
fn invalid_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "baseline", "temperature = 3\n");
    let o = train(dir.path(), &cfg, "run", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("temperature"));
    let cfg = toy_setup(dir.path(), "baseline", "theta = 0\n");
    let o = train(dir.path(), &cfg, "run", &[]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("theta"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "train = nope.jsonl\ntest = nope.jsonl\n").unwrap();
    assert_eq!(train(dir.path(), &cfg, "run", &[]).status.code(), Some(2));
}

#[test]
fn analyze_writes_one_csv_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "baseline", "");
    assert!(train(dir.path(), &cfg, "run", &[]).status.success());
    let ck = dir.path().join("run/checkpoint.json");
    let test = dir.path().join("test.jsonl");
    let out = dir.path().join("levels");
    let o = dcl(&["analyze", "--checkpoint", s(&ck), "--dataset", s(&test), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for k in [2, 3, 4, 7, 10] {
        assert!(out.join(format!("level_error_K{k}.csv")).is_file());
    }

    let o = dcl(&[
        "analyze", "--checkpoint", s(&ck), "--dataset", s(&test), "--k-sweep", "2", "--out-dir", s(&out),
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("level_error_K2.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("level,count,errors,error_rate"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",0,0")), "{csv}");
}

#[test]
fn analyze_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "baseline", "epochs = 1\n");
    assert!(train(dir.path(), &cfg, "run", &[]).status.success());
    let ck = dir.path().join("run/checkpoint.json");
    let missing = dcl(&["analyze", "--checkpoint", "/nonexistent/ck.json", "--dataset", s(&ck)]);
    assert_ne!(missing.status.code(), Some(0));

    let other = dir.path().join("other.jsonl");
    write_jsonl(&other, &[RawRecord::new("word0", "unseen_intent")]).unwrap();
    let o = dcl(&["analyze", "--checkpoint", s(&ck), "--dataset", s(&other)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unseen_intent"));
}

#[test]
fn report_summarises_a_curriculum_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "curriculum", "");
    assert!(train(dir.path(), &cfg, "run", &[]).status.success());
    let run = dir.path().join("run");
    let text = dcl(&["report", s(&run)]);
    assert!(text.status.success(), "{}", stderr(&text));
    assert!(stdout(&text).contains("config hash"));
    let o = dcl(&["report", s(&run), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rounds"].as_array().unwrap().len(), 5);
    assert_eq!(v["complex_non_increasing"], true);
    let counts: Vec<u64> = v["complex_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn report_on_empty_directory_lists_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcl(&["report", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for f in ["manifest.json", "metrics.json", "epochs.jsonl"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn report_flags_corrupt_logs_but_still_prints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "baseline", "");
    assert!(train(dir.path(), &cfg, "run", &[]).status.success());
    let epochs = dir.path().join("run/epochs.jsonl");
    let mut text = fs::read_to_string(&epochs).unwrap();
    text.push_str("{broken\n");
    fs::write(&epochs, text).unwrap();
    let o = dcl(&["report", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("best epoch"));
    assert!(stderr(&o).contains("epochs.jsonl:6"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), "curriculum", "");
    assert!(train(dir.path(), &cfg, "a", &["--threads", "1"]).status.success());
    assert!(train(dir.path(), &cfg, "b", &["--threads", "3"]).status.success());
    assert_eq!(
        fs::read(dir.path().join("a/metrics.json")).unwrap(),
        fs::read(dir.path().join("b/metrics.json")).unwrap()
    );
}
