//! Sample feature vectors: mean-pooled token embeddings, or vectors read
//! from an external embedding file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::seed;

pub const DEFAULT_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum EmbeddingFileError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: u64 },
    #[error("line {line}: vector has dimension {found}, expected {expected}")]
    RaggedDimension {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("line {line}: non-finite value in vector")]
    NonFinite { line: usize },
}

/// Trainable embedding matrix of shape `rows × dim`, row-major. Row 0 belongs
/// to the unknown token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            rows,
            data: vec![0.0; rows * dim],
        }
    }

    /// Uniform initialisation in `[-0.5/dim, 0.5/dim]`.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let bound = 0.5 / dim as f64;
        let data = (0..rows * dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { dim, rows, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged embedding rows");
        let n = rows.len();
        Self {
            dim,
            rows: n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row index for a token id; ids outside the table fall back to the
    /// unknown row.
    pub fn resolve(&self, token: u32) -> u32 {
        if (token as usize) < self.rows {
            token
        } else {
            0
        }
    }
}

/// The feature vector of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub sample_id: u64,
    pub values: Vec<f64>,
    /// Set when the sample had no tokens and the vector is all zeros.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Mean of the sample's token rows.
pub fn encode(sample: &Sample, table: &EmbeddingTable) -> EmbeddingVector {
    let mut values = vec![0.0; table.dim()];
    if sample.tokens.is_empty() {
        return EmbeddingVector {
            sample_id: sample.id,
            values,
            degenerate: true,
        };
    }
    for &tok in &sample.tokens {
        for (acc, x) in values.iter_mut().zip(table.row(table.resolve(tok))) {
            *acc += x;
        }
    }
    let n = sample.tokens.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    EmbeddingVector {
        sample_id: sample.id,
        values,
        degenerate: false,
    }
}

pub fn encode_all(samples: &[Sample], table: &EmbeddingTable) -> Vec<EmbeddingVector> {
    samples.par_iter().map(|s| encode(s, table)).collect()
}

/// Vectors keyed by sample id, all of dimension `dim`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    pub vectors: BTreeMap<u64, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: u64,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct EmbeddingLineRef<'a> {
    id: u64,
    vector: &'a [f64],
}

/// Reads `{"id": int, "vector": [..]}` lines.
pub fn load_external_embeddings(path: &Path) -> Result<ExternalEmbeddings, EmbeddingFileError> {
    let file = File::open(path).map_err(|source| EmbeddingFileError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = ExternalEmbeddings::default();
    let mut dim: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EmbeddingLine =
            serde_json::from_str(&line).map_err(|e| EmbeddingFileError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if parsed.vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingFileError::NonFinite { line: line_no });
        }
        match dim {
            None => dim = Some(parsed.vector.len()),
            Some(d) if d != parsed.vector.len() => {
                return Err(EmbeddingFileError::RaggedDimension {
                    line: line_no,
                    found: parsed.vector.len(),
                    expected: d,
                })
            }
            Some(_) => {}
        }
        if out.vectors.insert(parsed.id, parsed.vector).is_some() {
            return Err(EmbeddingFileError::DuplicateId {
                line: line_no,
                id: parsed.id,
            });
        }
    }
    out.dim = dim.unwrap_or(0);
    Ok(out)
}

/// Writes vectors in the exchange format. Floats use the shortest decimal
/// that round-trips.
pub fn write_embeddings(path: &Path, vectors: &[EmbeddingVector]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in vectors {
        serde_json::to_writer(
            &mut w,
            &EmbeddingLineRef {
                id: v.sample_id,
                vector: &v.values,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: u64, tokens: Vec<u32>) -> Sample {
        Sample {
            id,
            text: String::new(),
            tokens,
            label_id: 0,
        }
    }

    #[test]
    fn mean_pooling_examples() {
        let t = EmbeddingTable::from_rows(vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]]);
        assert_eq!(encode(&sample(0, vec![1]), &t).values, [1.0, 2.0, 3.0]);

        let t = EmbeddingTable::from_rows(vec![vec![0.0, 0.0], vec![2.0, 4.0]]);
        assert_eq!(encode(&sample(0, vec![0, 1]), &t).values, [1.0, 2.0]);

        let v = encode(&sample(5, vec![]), &t);
        assert!(v.degenerate);
        assert_eq!(v.values, [0.0, 0.0]);
        assert_eq!(v.sample_id, 5);
    }

    #[test]
    fn out_of_range_tokens_use_unknown_row() {
        let t = EmbeddingTable::from_rows(vec![vec![7.0], vec![1.0]]);
        assert_eq!(encode(&sample(0, vec![42]), &t).values, [7.0]);
    }

    #[test]
    fn random_init_bounds_and_determinism() {
        let a = EmbeddingTable::random(10, 8, 3);
        let b = EmbeddingTable::random(10, 8, 3);
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|x| x.abs() <= 0.5 / 8.0));
        assert_ne!(a, EmbeddingTable::random(10, 8, 4));
    }

    #[test]
    fn encode_all_preserves_order() {
        let t = EmbeddingTable::random(4, 3, 1);
        assert!(encode_all(&[], &t).is_empty());
        let samples = vec![sample(0, vec![1]), sample(1, vec![2, 3]), sample(2, vec![3])];
        let fwd = encode_all(&samples, &t);
        let mut rev = samples.clone();
        rev.reverse();
        let back = encode_all(&rev, &t);
        for (a, b) in fwd.iter().zip(back.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn external_file_parsing() {
        let f = tmp("{\"id\":0,\"vector\":[0.5,-0.5]}\n");
        let e = load_external_embeddings(f.path()).unwrap();
        assert_eq!(e.dim, 2);
        assert_eq!(e.vectors.len(), 1);
        assert_eq!(e.vectors[&0], [0.5, -0.5]);

        let f = tmp("{\"id\":0,\"vector\":[1,2]}\n{\"id\":1,\"vector\":[1,2,3]}\n");
        assert!(matches!(
            load_external_embeddings(f.path()),
            Err(EmbeddingFileError::RaggedDimension { line: 2, .. })
        ));

        let f = tmp("{\"id\":3,\"vector\":[1]}\n{\"id\":3,\"vector\":[2]}\n");
        assert!(matches!(
            load_external_embeddings(f.path()),
            Err(EmbeddingFileError::DuplicateId { line: 2, id: 3 })
        ));

        let f = tmp("{\"id\":3,\"vector\":[1]}\n{\"id\":4}\n");
        assert!(matches!(
            load_external_embeddings(f.path()),
            Err(EmbeddingFileError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn export_then_load_is_bitwise() {
        let t = EmbeddingTable::random(50, 16, 11);
        let samples: Vec<Sample> = (0..30)
            .map(|i| sample(i, vec![(i % 49) as u32 + 1, (i * 7 % 50) as u32]))
            .collect();
        let vecs = encode_all(&samples, &t);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_embeddings(f.path(), &vecs).unwrap();
        let back = load_external_embeddings(f.path()).unwrap();
        assert_eq!(back.dim, 16);
        for v in &vecs {
            let got = &back.vectors[&v.sample_id];
            for (a, b) in got.iter().zip(&v.values) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    proptest! {
        #[test]
        fn encode_is_linear_in_table(seed in 0u64..1000, c in -4.0f64..4.0, toks in proptest::collection::vec(0u32..6, 1..8)) {
            let t = EmbeddingTable::random(6, 4, seed);
            let mut scaled = t.clone();
            scaled.as_mut_slice().iter_mut().for_each(|x| *x *= c);
            let s = sample(0, toks);
            let a = encode(&s, &t);
            let b = encode(&s, &scaled);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x * c - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn encode_ignores_token_order(seed in 0u64..1000, toks in proptest::collection::vec(0u32..6, 1..8)) {
            let t = EmbeddingTable::random(6, 4, seed);
            let mut rev = toks.clone();
            rev.reverse();
            let a = encode(&sample(0, toks), &t);
            let b = encode(&sample(0, rev), &t);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }
    }
}
