//! Summary of a run directory written by `dcl train`.

use std::fs;
use std::path::Path;

use dcl_core::pipeline::{
    EpochLog, MetricsFile, RunManifest, RunMode, ScheduleLog, EPOCHS_FILE, MANIFEST_FILE,
    METRICS_FILE, SCHEDULE_FILE,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Failure;

#[derive(Debug, Serialize)]
struct RoundSummary {
    round: usize,
    loss: Option<f64>,
    valid_accuracy: Option<f64>,
    targets: Option<Vec<usize>>,
    frozen: Option<bool>,
}

#[derive(Debug, Serialize)]
struct Summary {
    run_dir: String,
    config_hash: String,
    mode: RunMode,
    best_epoch: Option<usize>,
    /// Test metrics as `(Acc, P, R, F1)` percentages.
    test: [f64; 4],
    valid: [f64; 4],
    rounds: Vec<RoundSummary>,
    complex_counts: Vec<usize>,
    complex_non_increasing: bool,
    corrupt: Vec<String>,
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str, corrupt: &mut Vec<String>) -> Option<T> {
    let text = fs::read_to_string(dir.join(name)).ok()?;
    match serde_json::from_str(&text) {
        Ok(v) => Some(v),
        Err(e) => {
            corrupt.push(format!("{name}: {e}"));
            None
        }
    }
}

fn read_lines<T: DeserializeOwned>(dir: &Path, name: &str, corrupt: &mut Vec<String>) -> Vec<T> {
    let Ok(text) = fs::read_to_string(dir.join(name)) else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => rows.push(v),
            Err(e) => corrupt.push(format!("{name}:{}: {e}", i + 1)),
        }
    }
    rows
}

pub fn run(dir: &Path, json: bool) -> Result<(), Failure> {
    let mut required = vec![MANIFEST_FILE, METRICS_FILE, EPOCHS_FILE];
    let mut corrupt = Vec::new();
    let manifest: Option<RunManifest> = if dir.join(MANIFEST_FILE).is_file() {
        read_json(dir, MANIFEST_FILE, &mut corrupt)
    } else {
        None
    };
    if manifest.as_ref().is_some_and(|m| m.config.mode == RunMode::Curriculum) {
        required.push(SCHEDULE_FILE);
    }
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Data(format!(
            "{}: missing {}",
            dir.display(),
            missing.join(", ")
        )));
    }

    let metrics: Option<MetricsFile> = read_json(dir, METRICS_FILE, &mut corrupt);
    let epochs: Vec<EpochLog> = read_lines(dir, EPOCHS_FILE, &mut corrupt);
    let schedule: Vec<ScheduleLog> = read_lines(dir, SCHEDULE_FILE, &mut corrupt);

    let rounds_seen = epochs
        .iter()
        .map(|e| e.round)
        .chain(schedule.iter().map(|s| s.round))
        .max()
        .map_or(0, |r| r + 1);
    let rounds: Vec<RoundSummary> = (0..rounds_seen)
        .map(|round| {
            let e = epochs.iter().find(|e| e.round == round);
            let s = schedule.iter().find(|s| s.round == round);
            RoundSummary {
                round,
                loss: e.map(|e| e.loss),
                valid_accuracy: e.map(|e| e.valid_accuracy),
                targets: s.map(|s| s.targets.clone()),
                frozen: s.map(|s| s.frozen),
            }
        })
        .collect();
    let complex_counts: Vec<usize> = schedule.iter().filter_map(|s| s.targets.last().copied()).collect();

    let summary = Summary {
        run_dir: dir.display().to_string(),
        config_hash: manifest
            .as_ref()
            .map(|m| m.config_hash.clone())
            .or_else(|| metrics.as_ref().map(|m| m.config_hash.clone()))
            .unwrap_or_default(),
        mode: manifest
            .as_ref()
            .map(|m| m.config.mode)
            .or_else(|| metrics.as_ref().map(|m| m.mode))
            .unwrap_or_default(),
        best_epoch: metrics.as_ref().and_then(|m| m.best_epoch),
        test: metrics.as_ref().map_or([0.0; 4], |m| m.test.percentages()),
        valid: metrics.as_ref().map_or([0.0; 4], |m| m.valid.percentages()),
        complex_non_increasing: complex_counts.windows(2).all(|w| w[1] <= w[0]),
        complex_counts,
        rounds,
        corrupt,
    };

    if json {
        println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    } else {
        print!("{}", render(&summary));
    }
    if summary.corrupt.is_empty() {
        Ok(())
    } else {
        for c in &summary.corrupt {
            eprintln!("corrupt: {c}");
        }
        Err(Failure::Data(format!("{} corrupt entries", summary.corrupt.len())))
    }
}

fn render(s: &Summary) -> String {
    let mut out = String::new();
    let fmt = |m: [f64; 4]| format!("Acc {:.2}  P {:.2}  R {:.2}  F1 {:.2}", m[0], m[1], m[2], m[3]);
    out.push_str(&format!("run          {}\n", s.run_dir));
    out.push_str(&format!("config hash  {}\n", s.config_hash));
    out.push_str(&format!("mode         {:?}\n", s.mode).to_lowercase());
    match s.best_epoch {
        Some(e) => out.push_str(&format!("best epoch   {e}\n")),
        None => out.push_str("best epoch   none\n"),
    }
    out.push_str(&format!("test         {}\n", fmt(s.test)));
    out.push_str(&format!("valid        {}\n", fmt(s.valid)));
    if !s.rounds.is_empty() {
        out.push_str("\nround  loss      valid   targets          frozen\n");
        for r in &s.rounds {
            let targets = r
                .targets
                .as_ref()
                .map(|t| t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:>5}  {:<8}  {:<6}  {:<15}  {}\n",
                r.round,
                r.loss.map_or("-".into(), |l| format!("{l:.4}")),
                r.valid_accuracy.map_or("-".into(), |a| format!("{:.2}", a * 100.0)),
                targets,
                r.frozen.map_or("-", |f| if f { "yes" } else { "no" }),
            ));
        }
    }
    if !s.complex_counts.is_empty() {
        out.push_str(&format!(
            "\ncomplex-level counts {} ({})\n",
            s.complex_counts
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" -> "),
            if s.complex_non_increasing { "non-increasing" } else { "INCREASED" }
        ));
    }
    out
}
