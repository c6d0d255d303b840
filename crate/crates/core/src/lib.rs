//! Intent classification trained on a curriculum of density-ranked samples.
//!
//! The crate is organised around the training loop:
//!
//! 1. [`data`] ingests corpora into canonical [`data::Sample`] records.
//! 2. [`encoder`] turns each sample into its feature vector (mean of token
//!    embeddings, or an externally supplied vector).
//! 3. [`difficulty`] scores every sample by how many same-class neighbours
//!    fall inside the class's demarcation distance, then clusters those
//!    densities into ordered difficulty levels.
//! 4. [`scheduler`] decides how many samples of each level are trained on
//!    in a given round.
//! 5. [`model`] trains a softmax classifier jointly with the embedding table.
//! 6. [`pipeline`] wires it together (baseline and curriculum runs, per-level
//!    error analysis) and [`metrics`] scores the result.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod difficulty;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scheduler;
pub mod seed;
pub mod synthetic;

pub use data::{LabelVocab, RawRecord, Sample, TokenVocab, TokenizeMode};
pub use difficulty::DifficultyAssignment;
pub use encoder::{EmbeddingTable, EmbeddingVector};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use model::{LinearClassifier, TrainConfig};
pub use pipeline::{RunConfig, RunMode, RunOutput};
pub use scheduler::{SchedulerConfig, SchedulerState};
