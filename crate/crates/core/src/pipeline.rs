//! End-to-end runs.
//!
//! A curriculum run alternates between defining difficulty and training:
//! the current encoder embeds the training set, difficulty levels are
//! assigned from those embeddings, the scheduler decides how many samples of
//! each level to use, and one epoch is trained on that selection. Every
//! `reassign_period` epochs the freshly trained encoder replaces the one that
//! defined difficulty. The baseline run trains on the full training set.
//!
//! Both report test metrics from the epoch with the best validation accuracy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::ConfigError;
use crate::data::{
    self, build_vocab, tokenize, DataError, DatasetSplit, LabelVocab, RawRecord, Sample,
    TokenVocab, TokenizeMode, ValidSize,
};
use crate::difficulty::{assign_difficulty, DifficultyAssignment, DifficultyError};
use crate::encoder::{self, EmbeddingFileError, EmbeddingTable};
use crate::metrics::{self, LevelError, MetricsReport};
use crate::model::{self, LinearClassifier, ModelError, TrainConfig};
use crate::scheduler::{select_samples, RoundPlan, Scheduler, SchedulerConfig, SchedulerError};
use crate::seed::{derive_seed, sha256_hex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embeddings(#[from] EmbeddingFileError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("round {round}: selected sample {id} is not a training sample")]
    Leakage { round: usize, id: u64 },
    #[error("label `{0}` is not known to the checkpoint")]
    VocabMismatch(String),
    #[error("external embeddings have dimension {found}, expected {expected}")]
    EmbeddingDim { expected: usize, found: usize },
}

impl PipelineError {
    /// Whether the failure comes from input data rather than the run itself.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Self::Data(_)
                | Self::Embeddings(_)
                | Self::VocabMismatch(_)
                | Self::Checkpoint(_)
                | Self::EmbeddingDim { .. }
                | Self::Difficulty(DifficultyError::MissingEmbedding(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Baseline,
    #[default]
    Curriculum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub valid_fraction: f64,
    pub valid_count: Option<usize>,
    pub tokenizer: TokenizeMode,
    pub min_count: usize,
    pub dim: usize,
    pub embeddings: Option<PathBuf>,
    pub train: TrainConfig,
    pub scheduler: SchedulerConfig,
    pub theta: f64,
    pub reassign_period: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Curriculum,
            train_path: None,
            valid_path: None,
            test_path: None,
            valid_fraction: 0.1,
            valid_count: None,
            tokenizer: TokenizeMode::Word,
            min_count: 2,
            dim: encoder::DEFAULT_DIM,
            embeddings: None,
            train: TrainConfig::default(),
            scheduler: SchedulerConfig::default(),
            theta: crate::difficulty::DEFAULT_THETA,
            reassign_period: 1,
            seed: 0,
        }
    }
}

/// Tokenised and split data with its vocabularies.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: TokenVocab,
    pub labels: LabelVocab,
    pub split: DatasetSplit,
    pub warnings: Vec<String>,
    /// SHA-256 per input file, keyed by role (`train`, `valid`, `test`).
    pub checksums: BTreeMap<String, String>,
}

impl PreparedData {
    /// Builds vocabularies from the training records and converts all
    /// splits. Ids follow record order: train, then valid, then test. When
    /// `valid` is `None` a stratified hold-out of the training records is
    /// used.
    pub fn from_records(
        train: &[RawRecord],
        valid: Option<&[RawRecord]>,
        test: &[RawRecord],
        cfg: &RunConfig,
    ) -> Result<Self, PipelineError> {
        let labels = LabelVocab::from_labels(train.iter().map(|r| r.label.clone()));
        let mut warnings = Vec::new();
        // Token ids are filled in once the vocabulary is known.
        let empty = build_vocab(std::iter::empty::<Vec<String>>(), 1);
        let all = data::to_samples(train, 0, cfg.tokenizer, &empty, &labels)?;
        let (train_samples, valid_samples, first_test_id) = match valid {
            Some(valid) => {
                let va = data::to_samples(valid, train.len() as u64, cfg.tokenizer, &empty, &labels)?;
                (all, va, (train.len() + valid.len()) as u64)
            }
            None => {
                let size = match cfg.valid_count {
                    Some(c) => ValidSize::Count(c),
                    None => ValidSize::Fraction(cfg.valid_fraction),
                };
                let s = data::split(all, size, derive_seed(cfg.seed, "split", 0, 0))?;
                warnings.extend(s.warnings);
                (s.train, s.valid, train.len() as u64)
            }
        };
        // The vocabulary only sees text that is trained on.
        let docs: Vec<Vec<String>> = train_samples
            .iter()
            .map(|s| tokenize(&s.text, cfg.tokenizer))
            .collect();
        let vocab = build_vocab(&docs, cfg.min_count);
        let fill = |samples: Vec<Sample>| -> Vec<Sample> {
            samples
                .into_iter()
                .map(|mut s| {
                    s.tokens = vocab.ids(&tokenize(&s.text, cfg.tokenizer));
                    s
                })
                .collect()
        };
        let train_samples = fill(train_samples);
        let valid_samples = fill(valid_samples);
        let test = data::to_samples(test, first_test_id, cfg.tokenizer, &vocab, &labels)?;
        Ok(Self {
            vocab,
            labels,
            split: DatasetSplit {
                train: train_samples,
                valid: valid_samples,
                test,
            },
            warnings,
            checksums: BTreeMap::new(),
        })
    }

    /// Loads the JSONL files named in `cfg`.
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let train_path = cfg.train_path.as_ref().expect("validated");
        let test_path = cfg.test_path.as_ref().expect("validated");
        let train = data::ingest_jsonl(train_path)?;
        let test = data::ingest_jsonl(test_path)?;
        let valid = cfg.valid_path.as_deref().map(data::ingest_jsonl).transpose()?;
        let mut prepared = Self::from_records(&train, valid.as_deref(), &test, cfg)?;
        let mut sums = BTreeMap::new();
        sums.insert("train".to_string(), file_sha(train_path)?);
        sums.insert("test".to_string(), file_sha(test_path)?);
        if let Some(p) = &cfg.valid_path {
            sums.insert("valid".to_string(), file_sha(p)?);
        }
        if let Some(p) = &cfg.embeddings {
            sums.insert("embeddings".to_string(), file_sha(p)?);
        }
        prepared.checksums = sums;
        Ok(prepared)
    }
}

fn file_sha(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// One line of `epochs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub round: usize,
    pub loss: f64,
    pub selected_per_level: Vec<usize>,
    pub selected_total: usize,
    pub valid_accuracy: f64,
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

/// One line of `schedule.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLog {
    pub round: usize,
    pub omegas: Vec<f64>,
    pub avail: Vec<usize>,
    pub targets: Vec<usize>,
    pub frozen: bool,
    pub selected_total: usize,
}

impl From<&RoundPlan> for ScheduleLog {
    fn from(p: &RoundPlan) -> Self {
        Self {
            round: p.round,
            omegas: p.omegas.clone(),
            avail: p.avail.clone(),
            targets: p.targets.clone(),
            frozen: p.frozen,
            selected_total: p.targets.iter().sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: RunMode,
    pub config_hash: String,
    /// Epoch (1-based) whose parameters were kept; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub valid_metrics: MetricsReport,
    pub test_metrics: MetricsReport,
    pub epochs: Vec<EpochLog>,
    pub schedule: Vec<ScheduleLog>,
    /// Every difficulty assignment computed during the run, in round order.
    pub assignments: Vec<DifficultyAssignment>,
    /// Ids trained on in each round.
    pub selections: Vec<Vec<u64>>,
    pub checkpoint: Checkpoint,
    /// Parameters after the last epoch (may differ from the kept checkpoint).
    pub final_table: EmbeddingTable,
    pub final_classifier: LinearClassifier,
}

/// Predictions for `samples`, in order.
pub fn predict_all(samples: &[Sample], table: &EmbeddingTable, clf: &LinearClassifier) -> Vec<usize> {
    samples
        .par_iter()
        .map(|s| model::predict(s, table, clf))
        .collect()
}

pub fn evaluate(
    samples: &[Sample],
    table: &EmbeddingTable,
    clf: &LinearClassifier,
) -> MetricsReport {
    let preds = predict_all(samples, table, clf);
    let golds: Vec<usize> = samples.iter().map(|s| s.label_id).collect();
    MetricsReport::evaluate(&golds, &preds, clf.classes())
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Vectors that define difficulty in round 0.
fn initial_vectors(
    cfg: &RunConfig,
    train: &[Sample],
    table: &EmbeddingTable,
) -> Result<BTreeMap<u64, Vec<f64>>, PipelineError> {
    match &cfg.embeddings {
        Some(path) => {
            let ext = encoder::load_external_embeddings(path)?;
            let ids: HashSet<u64> = train.iter().map(|s| s.id).collect();
            Ok(ext.vectors.into_iter().filter(|(id, _)| ids.contains(id)).collect())
        }
        None => Ok(current_vectors(train, table)),
    }
}

fn current_vectors(train: &[Sample], table: &EmbeddingTable) -> BTreeMap<u64, Vec<f64>> {
    encoder::encode_all(train, table)
        .into_iter()
        .map(|v| (v.sample_id, v.values))
        .collect()
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    data: &'a PreparedData,
    table: EmbeddingTable,
    clf: LinearClassifier,
    best: Option<(usize, f64, EmbeddingTable, LinearClassifier)>,
    epochs: Vec<EpochLog>,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a RunConfig, data: &'a PreparedData) -> Self {
        let table = EmbeddingTable::random(
            data.vocab.len() + 1,
            cfg.dim,
            derive_seed(cfg.seed, "embedding-init", 0, 0),
        );
        let clf = LinearClassifier::random(
            data.labels.len(),
            cfg.dim,
            derive_seed(cfg.seed, "classifier-init", 0, 0),
        );
        Self {
            cfg,
            data,
            table,
            clf,
            best: None,
            epochs: Vec::new(),
        }
    }

    fn train_round(&mut self, round: usize, batch: &[&Sample], per_level: Vec<usize>) -> Result<(), PipelineError> {
        let started_unix_ms = now_ms();
        let clock = Instant::now();
        let loss = model::train_epoch(
            batch,
            &mut self.table,
            &mut self.clf,
            &self.cfg.train,
            derive_seed(self.cfg.seed, "shuffle", round as u64, 0),
        )?;
        let valid_accuracy = evaluate(&self.data.split.valid, &self.table, &self.clf).accuracy;
        if self.best.as_ref().is_none_or(|b| valid_accuracy > b.1) {
            self.best = Some((round + 1, valid_accuracy, self.table.clone(), self.clf.clone()));
        }
        self.epochs.push(EpochLog {
            round,
            loss,
            selected_total: batch.len(),
            selected_per_level: per_level,
            valid_accuracy,
            started_unix_ms,
            elapsed_ms: clock.elapsed().as_millis(),
        });
        Ok(())
    }

    fn finish(
        self,
        mode: RunMode,
        schedule: Vec<ScheduleLog>,
        assignments: Vec<DifficultyAssignment>,
        selections: Vec<Vec<u64>>,
    ) -> RunOutput {
        let (best_epoch, table, clf) = match self.best {
            Some((epoch, _, t, c)) => (Some(epoch), t, c),
            None => (None, self.table.clone(), self.clf.clone()),
        };
        let split = &self.data.split;
        let config_hash = self.cfg.hash();
        RunOutput {
            mode,
            best_epoch,
            valid_metrics: evaluate(&split.valid, &table, &clf),
            test_metrics: evaluate(&split.test, &table, &clf),
            epochs: self.epochs,
            schedule,
            assignments,
            selections,
            checkpoint: Checkpoint::new(
                config_hash.clone(),
                self.cfg.tokenizer,
                self.data.vocab.clone(),
                self.data.labels.clone(),
                table,
                clf,
            ),
            config_hash,
            final_table: self.table,
            final_classifier: self.clf,
        }
    }
}

/// Trains on the whole training set every epoch.
pub fn run_baseline(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput, PipelineError> {
    let mut trainer = Trainer::new(cfg, data);
    let batch: Vec<&Sample> = data.split.train.iter().collect();
    for round in 0..cfg.train.epochs {
        trainer.train_round(round, &batch, vec![batch.len()])?;
    }
    Ok(trainer.finish(RunMode::Baseline, Vec::new(), Vec::new(), Vec::new()))
}

/// Trains on a per-round, difficulty-balanced subset of the training set.
pub fn run_curriculum(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput, PipelineError> {
    let train = &data.split.train;
    let mut trainer = Trainer::new(cfg, data);
    let by_id: HashMap<u64, &Sample> = train.iter().map(|s| (s.id, s)).collect();
    let held_out: HashSet<u64> = data
        .split
        .valid
        .iter()
        .chain(&data.split.test)
        .map(|s| s.id)
        .collect();

    let k = cfg.scheduler.levels;
    let select_seed = derive_seed(cfg.seed, "select", 0, 0);
    let mut scheduler = Scheduler::new(cfg.scheduler.clone());
    let mut assignments = Vec::new();
    let mut schedule = Vec::new();
    let mut selections = Vec::new();

    if cfg.train.epochs > 0 {
        let vectors = initial_vectors(cfg, train, &trainer.table)?;
        assignments.push(assign_difficulty(&vectors, train, cfg.theta, k, 0)?);
    }
    for round in 0..cfg.train.epochs {
        if round > 0 && round % cfg.reassign_period == 0 {
            let vectors = current_vectors(train, &trainer.table);
            assignments.push(assign_difficulty(&vectors, train, cfg.theta, k, round)?);
        }
        let assignment = assignments.last().expect("assignment exists once training starts");
        let plan = scheduler.plan(&assignment.level_counts())?;
        let ids = select_samples(assignment, &plan.targets, select_seed, round)?;
        let mut batch = Vec::with_capacity(ids.len());
        for id in &ids {
            match by_id.get(id) {
                Some(s) if !held_out.contains(id) => batch.push(*s),
                _ => return Err(PipelineError::Leakage { round, id: *id }),
            }
        }
        schedule.push(ScheduleLog::from(&plan));
        if batch.is_empty() {
            return Err(ModelError::EmptySamples.into());
        }
        trainer.train_round(round, &batch, plan.targets.clone())?;
        selections.push(ids);
    }
    Ok(trainer.finish(RunMode::Curriculum, schedule, assignments, selections))
}

pub fn run(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput, PipelineError> {
    match cfg.mode {
        RunMode::Baseline => run_baseline(cfg, data),
        RunMode::Curriculum => run_curriculum(cfg, data),
    }
}

/// Per-level error rates for one `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAnalysis {
    pub k: usize,
    pub levels: BTreeMap<usize, LevelError>,
}

/// Difficulty is assigned on `samples` from the checkpoint's own embeddings,
/// then each level's error rate under the checkpoint's predictions is
/// reported, once per requested `K`.
pub fn analyze_levels(
    checkpoint: &Checkpoint,
    samples: &[Sample],
    ks: &[usize],
    theta: f64,
) -> Result<Vec<LevelAnalysis>, PipelineError> {
    let vectors = current_vectors(samples, &checkpoint.table);
    let preds = predict_all(samples, &checkpoint.table, &checkpoint.classifier);
    let golds: Vec<usize> = samples.iter().map(|s| s.label_id).collect();
    let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    ks.iter()
        .map(|&k| {
            let assignment = assign_difficulty(&vectors, samples, theta, k, 0)?;
            Ok(LevelAnalysis {
                k,
                levels: metrics::per_level_error(&ids, &golds, &preds, &assignment),
            })
        })
        .collect()
}

/// Tokenises records with a checkpoint's vocabularies. Unknown labels are an
/// error.
pub fn samples_for_checkpoint(
    checkpoint: &Checkpoint,
    records: &[RawRecord],
) -> Result<Vec<Sample>, PipelineError> {
    if let Some(r) = records.iter().find(|r| checkpoint.labels.id(&r.label).is_none()) {
        return Err(PipelineError::VocabMismatch(r.label.clone()));
    }
    Ok(data::to_samples(
        records,
        0,
        checkpoint.tokenizer,
        &checkpoint.vocab,
        &checkpoint.labels,
    )?)
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub checksums: BTreeMap<String, String>,
    pub vocab_size: usize,
    pub label_count: usize,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    pub best_epoch: Option<usize>,
    pub metrics: MetricsReport,
    pub warnings: Vec<String>,
}

/// Contents of `metrics.json`. No timings, so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub mode: RunMode,
    pub config_hash: String,
    pub best_epoch: Option<usize>,
    pub valid: MetricsReport,
    pub test: MetricsReport,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SCHEDULE_FILE: &str = "schedule.jsonl";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const ASSIGNMENT_FILE: &str = "assignment.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes manifest, metrics, logs, assignments and checkpoint into `dir`.
pub fn write_run_outputs(
    dir: &Path,
    cfg: &RunConfig,
    data: &PreparedData,
    out: &RunOutput,
) -> Result<MetricsFile, PipelineError> {
    fs::create_dir_all(dir)?;
    let metrics = MetricsFile {
        mode: out.mode,
        config_hash: out.config_hash.clone(),
        best_epoch: out.best_epoch,
        valid: out.valid_metrics.clone(),
        test: out.test_metrics.clone(),
    };
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    write_json(
        &dir.join(MANIFEST_FILE),
        &RunManifest {
            config: cfg.clone(),
            config_hash: out.config_hash.clone(),
            checksums: data.checksums.clone(),
            vocab_size: data.vocab.len(),
            label_count: data.labels.len(),
            train_size: data.split.train.len(),
            valid_size: data.split.valid.len(),
            test_size: data.split.test.len(),
            best_epoch: out.best_epoch,
            metrics: out.test_metrics.clone(),
            warnings: data.warnings.clone(),
        },
    )?;
    write_lines(&dir.join(EPOCHS_FILE), &out.epochs)?;
    if out.mode == RunMode::Curriculum {
        write_lines(&dir.join(SCHEDULE_FILE), &out.schedule)?;
        let mut w = BufWriter::new(File::create(dir.join(ASSIGNMENT_FILE))?);
        for a in &out.assignments {
            a.write_jsonl(&mut w)?;
        }
        w.flush()?;
    }
    out.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(rows: &[(&str, &str)]) -> Vec<RawRecord> {
        rows.iter().map(|(t, l)| RawRecord::new(*t, *l)).collect()
    }

    #[test]
    fn prepared_ids_and_vocab_come_from_train_only() {
        let cfg = RunConfig {
            min_count: 1,
            ..RunConfig::default()
        };
        let train = records(&[("a b", "x"), ("c d", "y")]);
        let valid = records(&[("a z", "x")]);
        let test = records(&[("zz c", "y")]);
        let p = PreparedData::from_records(&train, Some(&valid), &test, &cfg).unwrap();
        assert_eq!(p.vocab.len(), 4);
        assert_eq!(p.split.valid[0].id, 2);
        assert_eq!(p.split.test[0].id, 3);
        assert_eq!(p.split.valid[0].tokens[1], TokenVocab::UNKNOWN);
    }

    #[test]
    fn held_out_words_are_unknown_after_split() {
        let cfg = RunConfig {
            min_count: 1,
            valid_fraction: 0.5,
            ..RunConfig::default()
        };
        let train = records(&[("alpha", "x"), ("beta", "x"), ("gamma", "y"), ("delta", "y")]);
        let p = PreparedData::from_records(&train, None, &[], &cfg).unwrap();
        assert_eq!(p.split.train.len(), 2);
        assert_eq!(p.split.valid.len(), 2);
        assert_eq!(p.vocab.len(), 2);
        assert!(p.split.valid.iter().all(|s| s.tokens == [TokenVocab::UNKNOWN]));
    }

    #[test]
    fn unknown_test_label_is_an_error() {
        let cfg = RunConfig::default();
        let train = records(&[("a", "x"), ("b", "x")]);
        let err = PreparedData::from_records(&train, Some(&train), &records(&[("a", "q")]), &cfg);
        assert!(matches!(err, Err(PipelineError::Data(DataError::UnknownLabel(_)))));
    }
}
