//! Checkpoint file: a single JSON document holding everything needed to
//! re-encode and classify new text.
//!
//! ```text
//! {
//!   "format": "dcl-checkpoint",
//!   "version": 1,
//!   "config_hash": "<sha256 of the resolved run config>",
//!   "tokenizer": "word" | "char",
//!   "vocab": {"min_count": 2, "tokens": [...]},   // token i has id i+1
//!   "labels": [...],                               // sorted label strings
//!   "table": {"dim": 64, "rows": V+1, "data": [...]},
//!   "classifier": {"classes": C, "dim": 64, "weights": [...], "bias": [...]}
//! }
//! ```
//!
//! Floats are written as shortest round-trip decimals, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelVocab, TokenVocab, TokenizeMode};
use crate::encoder::EmbeddingTable;
use crate::model::LinearClassifier;

pub const FORMAT: &str = "dcl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (format `{0}`)")]
    WrongFormat(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub tokenizer: TokenizeMode,
    pub vocab: TokenVocab,
    pub labels: LabelVocab,
    pub table: EmbeddingTable,
    pub classifier: LinearClassifier,
}

impl Checkpoint {
    pub fn new(
        config_hash: String,
        tokenizer: TokenizeMode,
        vocab: TokenVocab,
        labels: LabelVocab,
        table: EmbeddingTable,
        classifier: LinearClassifier,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash,
            tokenizer,
            vocab,
            labels,
            table,
            classifier,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != FORMAT {
            return Err(CheckpointError::WrongFormat(ck.format));
        }
        if ck.version != VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        if ck.table.rows() != ck.vocab.len() + 1 {
            return Err(CheckpointError::Inconsistent(format!(
                "table has {} rows for a vocabulary of {}",
                ck.table.rows(),
                ck.vocab.len()
            )));
        }
        if ck.classifier.classes() != ck.labels.len() || ck.classifier.dim() != ck.table.dim() {
            return Err(CheckpointError::Inconsistent(
                "classifier shape does not match labels/table".into(),
            ));
        }
        Ok(ck)
    }
}
