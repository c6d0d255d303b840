//! Corpus ingestion, tokenisation, vocabularies and seeded stratified splits.
//!
//! Every corpus is reduced to the canonical JSONL form, one
//! `{"text": ..., "label": ...}` object per line, before it reaches the
//! trainer. CSV (BANKING77 style) and CLINC150's sectioned JSON are handled
//! by converters in this module.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: missing column `{column}` in header")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row at line {line} has {found} fields, header has {expected}")]
    RowArity {
        path: PathBuf,
        line: u64,
        found: usize,
        expected: usize,
    },
    #[error("{path}: csv error: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{}, line {line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("cannot split an empty sample list")]
    EmptySplit,
    #[error("invalid validation size: {0}")]
    InvalidValidSize(String),
}

/// One `(text, label)` pair as read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub text: String,
    pub label: String,
}

impl RawRecord {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

/// A labelled utterance with its token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<u32>,
    pub label_id: usize,
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Open {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a headed CSV file, picking the two named columns.
pub fn ingest_csv(
    path: &Path,
    text_column: &str,
    label_column: &str,
) -> Result<Vec<RawRecord>, DataError> {
    let file = open(path)?;
    let csv_err = |e: csv::Error| DataError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let text_idx = find(text_column)?;
    let label_idx = find(label_column)?;

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        if row.len() != headers.len() {
            return Err(DataError::RowArity {
                path: path.to_path_buf(),
                line: row.position().map(|p| p.line()).unwrap_or(0),
                found: row.len(),
                expected: headers.len(),
            });
        }
        out.push(RawRecord::new(row[text_idx].trim(), row[label_idx].trim()));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: Option<String>,
    label: Option<String>,
}

/// Reads canonical JSONL. Blank lines are skipped.
pub fn ingest_jsonl(path: &Path) -> Result<Vec<RawRecord>, DataError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DataError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let rec: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| malformed(json_message(&e)))?;
        let text = rec.text.ok_or_else(|| malformed("missing field `text`".into()))?;
        let label = rec
            .label
            .ok_or_else(|| malformed("missing field `label`".into()))?;
        out.push(RawRecord { text, label });
    }
    Ok(out)
}

/// serde_json's message without its trailing `at line L column C`.
fn json_message(e: &serde_json::Error) -> String {
    let full = e.to_string();
    match full.rsplit_once(" at line ") {
        Some((head, _)) => format!("{head} (column {})", e.column()),
        None => full,
    }
}

/// Writes records as canonical JSONL (`text` first, then `label`).
pub fn write_jsonl(path: &Path, records: &[RawRecord]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Sections of the CLINC150 `data_full.json` file that hold in-scope intents.
pub const CLINC150_IN_SCOPE: [&str; 3] = ["train", "val", "test"];

/// Reads CLINC150-style JSON: an object mapping section names to lists of
/// `[text, intent]` pairs. Sections are emitted in the order requested.
pub fn ingest_clinc150(path: &Path, sections: &[&str]) -> Result<Vec<RawRecord>, DataError> {
    let reader = BufReader::new(open(path)?);
    let malformed = |line: usize, message: String| DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let root: BTreeMap<String, Vec<(String, String)>> = serde_json::from_reader(reader)
        .map_err(|e| malformed(e.line(), json_message(&e)))?;
    let mut out = Vec::new();
    for section in sections {
        let rows = root
            .get(*section)
            .ok_or_else(|| malformed(0, format!("missing section `{section}`")))?;
        out.extend(rows.iter().map(|(t, l)| RawRecord::new(t.clone(), l.clone())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    #[default]
    Word,
    /// One token per non-whitespace code point, for unsegmented scripts.
    Char,
}

impl std::str::FromStr for TokenizeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Self::Word),
            "char" => Ok(Self::Char),
            other => Err(format!("unknown tokenizer `{other}` (expected word or char)")),
        }
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF1F}')
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Word => text
            .split_whitespace()
            .map(|w| w.trim_matches(is_punctuation).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect(),
        TokenizeMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
    }
}

/// Token to id mapping. Id 0 is the unknown token; known tokens take
/// `1..=len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenVocabRepr", into = "TokenVocabRepr")]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct TokenVocabRepr {
    min_count: usize,
    tokens: Vec<String>,
}

impl From<TokenVocabRepr> for TokenVocab {
    fn from(r: TokenVocabRepr) -> Self {
        Self::from_tokens(r.tokens, r.min_count)
    }
}

impl From<TokenVocab> for TokenVocabRepr {
    fn from(v: TokenVocab) -> Self {
        Self {
            min_count: v.min_count,
            tokens: v.tokens,
        }
    }
}

impl TokenVocab {
    pub const UNKNOWN: u32 = 0;

    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Self {
            tokens,
            index,
            min_count,
        }
    }

    /// Number of known tokens, excluding the unknown slot.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.tokens.get(i as usize))
            .map(String::as_str)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Builds a vocabulary from tokenised documents. Tokens seen at least
/// `min_count` times are kept, ordered by descending frequency and then
/// lexicographically.
pub fn build_vocab<D, S>(documents: D, min_count: usize) -> TokenVocab
where
    D: IntoIterator,
    D::Item: AsRef<[S]>,
    S: AsRef<str>,
{
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in documents {
        for tok in doc.as_ref() {
            *counts.entry(tok.as_ref().to_string()).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    TokenVocab::from_tokens(kept.into_iter().map(|(t, _)| t).collect(), min_count)
}

/// Label string to category index, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelVocab {
    fn from(labels: Vec<String>) -> Self {
        Self::from_labels(labels)
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.labels
    }
}

impl LabelVocab {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort();
        labels.dedup();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Turns raw records into samples with ids `first_id..`.
pub fn to_samples(
    records: &[RawRecord],
    first_id: u64,
    mode: TokenizeMode,
    vocab: &TokenVocab,
    labels: &LabelVocab,
) -> Result<Vec<Sample>, DataError> {
    records
        .iter()
        .zip(first_id..)
        .map(|(rec, id)| {
            let label_id = labels
                .id(&rec.label)
                .ok_or_else(|| DataError::UnknownLabel(rec.label.clone()))?;
            Ok(Sample {
                id,
                text: rec.text.clone(),
                tokens: vocab.ids(&tokenize(&rec.text, mode)),
                label_id,
            })
        })
        .collect()
}

/// How much of the training pool to hold out for validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidSize {
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, Default)]
pub struct TrainValidSplit {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Train, validation and test partitions of one dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Seeded stratified hold-out.
///
/// Each label with at least two samples contributes a share of the
/// validation set proportional to its size (largest-remainder rounding, ties
/// to the lower label id) and always keeps one sample in train. Labels with a
/// single sample stay in train and produce a warning.
pub fn split(samples: Vec<Sample>, size: ValidSize, seed: u64) -> Result<TrainValidSplit, DataError> {
    if samples.is_empty() {
        return Err(DataError::EmptySplit);
    }
    let mut by_label: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        by_label.entry(s.label_id).or_default().push(s);
    }
    let mut warnings = Vec::new();
    let eligible: Vec<(usize, usize)> = by_label
        .iter()
        .filter_map(|(&label, group)| {
            if group.len() < 2 {
                warnings.push(format!(
                    "label {label} has {} sample(s); kept entirely in train",
                    group.len()
                ));
                None
            } else {
                Some((label, group.len()))
            }
        })
        .collect();
    let pool: usize = eligible.iter().map(|&(_, n)| n).sum();
    let capacity = pool - eligible.len();
    let target = match size {
        ValidSize::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(DataError::InvalidValidSize(format!(
                    "fraction {f} outside (0, 1)"
                )));
            }
            ((f * pool as f64).round() as usize).min(capacity)
        }
        ValidSize::Count(c) => {
            if c > capacity {
                return Err(DataError::InvalidValidSize(format!(
                    "requested {c} validation samples but at most {capacity} can be held out"
                )));
            }
            c
        }
    };

    let mut quota: BTreeMap<usize, usize> = BTreeMap::new();
    let mut remainders: Vec<(usize, usize)> = Vec::new();
    let mut assigned = 0usize;
    for &(label, n) in &eligible {
        let q = (n * target).checked_div(pool).unwrap_or(0);
        let q = q.min(n - 1);
        assigned += q;
        quota.insert(label, q);
        remainders.push((label, if pool == 0 { 0 } else { n * target % pool }));
    }
    // Largest remainder first, lower label on ties. Repeat passes in case caps
    // absorbed part of the quota.
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    while assigned < target {
        let mut progressed = false;
        for &(label, _) in &remainders {
            if assigned == target {
                break;
            }
            let n = by_label[&label].len();
            let q = quota.get_mut(&label).expect("quota for eligible label");
            if *q < n - 1 {
                *q += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (label, mut group) in by_label {
        group.sort_by_key(|s| s.id);
        let q = quota.get(&label).copied().unwrap_or(0);
        if q > 0 {
            let mut rng = seed::derived_rng(seed, "split", label as u64, 0);
            group.shuffle(&mut rng);
        }
        let rest = group.split_off(q);
        valid.extend(group);
        train.extend(rest);
    }
    train.sort_by_key(|s| s.id);
    valid.sort_by_key(|s| s.id);
    Ok(TrainValidSplit {
        train,
        valid,
        warnings,
    })
}
