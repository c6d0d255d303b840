//! Accuracy, macro precision/recall/F1 and per-level error rates.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::difficulty::DifficultyAssignment;

/// `C × C` counts; rows are gold labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        assert!(rows.iter().all(|r| r.len() == classes));
        Self {
            classes,
            counts: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.classes + pred]
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    fn gold_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    fn pred_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, c)).sum()
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], classes: usize) -> ConfusionMatrix {
    assert_eq!(golds.len(), preds.len(), "gold/prediction length mismatch");
    let mut m = ConfusionMatrix::new(classes);
    for (&g, &p) in golds.iter().zip(preds) {
        m.add(g, p);
    }
    m
}

pub fn accuracy(m: &ConfusionMatrix) -> f64 {
    match m.total() {
        0 => 0.0,
        total => m.trace() as f64 / total as f64,
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class scores for every class that occurs in gold or predictions.
pub fn per_class(m: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..m.classes())
        .filter_map(|c| {
            let tp = m.get(c, c);
            let gold = m.gold_count(c);
            let pred = m.pred_count(c);
            if gold == 0 && pred == 0 {
                return None;
            }
            let precision = ratio(tp, pred);
            let recall = ratio(tp, gold);
            Some(ClassMetrics {
                label: c,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: gold,
            })
        })
        .collect()
}

/// Macro-averaged (precision, recall, F1) over classes present in gold.
pub fn macro_prf(m: &ConfusionMatrix) -> (f64, f64, f64) {
    let classes: Vec<ClassMetrics> = per_class(m).into_iter().filter(|c| c.support > 0).collect();
    if classes.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = classes.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / n;
    (mean(|c| c.precision), mean(|c| c.recall), mean(|c| c.f1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub count: u64,
    pub errors: u64,
    pub error_rate: f64,
}

/// Error rate within each difficulty level. Levels without samples are
/// omitted. Panics if a sample id has no level in `assignment`.
pub fn per_level_error(
    ids: &[u64],
    golds: &[usize],
    preds: &[usize],
    assignment: &DifficultyAssignment,
) -> BTreeMap<usize, LevelError> {
    assert!(ids.len() == golds.len() && golds.len() == preds.len());
    let mut tally: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for ((id, g), p) in ids.iter().zip(golds).zip(preds) {
        let level = assignment
            .level_of(*id)
            .unwrap_or_else(|| panic!("sample {id} has no difficulty level"));
        let slot = tally.entry(level).or_default();
        slot.0 += 1;
        if g != p {
            slot.1 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(level, (count, errors))| {
            (
                level,
                LevelError {
                    count,
                    errors,
                    error_rate: errors as f64 / count as f64,
                },
            )
        })
        .collect()
}

/// Writes `level,count,errors,error_rate`.
pub fn write_level_csv<W: Write>(
    mut w: W,
    levels: &BTreeMap<usize, LevelError>,
) -> io::Result<()> {
    writeln!(w, "level,count,errors,error_rate")?;
    for (level, e) in levels {
        writeln!(w, "{level},{},{},{}", e.count, e.errors, e.error_rate)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub evaluated: u64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_level: Option<BTreeMap<usize, LevelError>>,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix) -> Self {
        let (p, r, f1) = macro_prf(m);
        Self {
            accuracy: accuracy(m),
            macro_precision: p,
            macro_recall: r,
            macro_f1: f1,
            evaluated: m.total(),
            per_class: per_class(m),
            per_level: None,
        }
    }

    pub fn evaluate(golds: &[usize], preds: &[usize], classes: usize) -> Self {
        Self::from_confusion(&confusion(golds, preds, classes))
    }

    /// `(Acc, P, R, F1)` as percentages rounded to two decimals.
    pub fn percentages(&self) -> [f64; 4] {
        [
            self.accuracy,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
        ]
        .map(percent)
    }
}

pub fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}
