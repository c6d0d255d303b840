//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `mode` | `baseline` or `curriculum` | `curriculum` |
//! | `train`, `test` | canonical JSONL paths | required |
//! | `valid` | JSONL path; if absent a stratified split of `train` is used | |
//! | `valid_fraction` / `valid_count` | size of that split | `0.1` |
//! | `tokenizer` | `word` or `char` | `word` |
//! | `min_count` | vocabulary frequency threshold | `2` |
//! | `dim` | embedding dimension | `64` |
//! | `embeddings` | external vector JSONL defining the initial difficulty | |
//! | `learning_rate`, `batch_size`, `epochs`, `l2` | SGD settings | `0.05`, `256`, `15`, `1e-5` |
//! | `k`, `lambda`, `omega_floor` | curriculum levels and weight schedule | `3`, `2`, `0.1` |
//! | `theta` | demarcation percentile | `60` |
//! | `reassign_period` | epochs between difficulty re-assignments | `1` |
//! | `seed` | root seed | `0` |
//!
//! Relative paths in a config file resolve against the file's directory.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pipeline::{RunConfig, RunMode};
use crate::seed::sha256_hex;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
}

/// Splits a config document into `(key, value, line)` triples in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: idx + 1 })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: idx + 1 });
        }
        out.push((key.to_string(), v.trim().to_string(), idx + 1));
    }
    Ok(out)
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| invalid(key, value, e))
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`].
    pub const KEYS: [&'static str; 20] = [
        "mode",
        "train",
        "valid",
        "test",
        "valid_fraction",
        "valid_count",
        "tokenizer",
        "min_count",
        "dim",
        "embeddings",
        "learning_rate",
        "batch_size",
        "epochs",
        "l2",
        "k",
        "lambda",
        "omega_floor",
        "theta",
        "reassign_period",
        "seed",
    ];

    /// Sets one key. Path values are joined onto `base` when relative.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "mode" => self.mode = value.parse().map_err(|e: String| invalid(key, value, e))?,
            "train" => self.train_path = (!value.is_empty()).then(|| path(value)),
            "valid" => self.valid_path = (!value.is_empty()).then(|| path(value)),
            "test" => self.test_path = (!value.is_empty()).then(|| path(value)),
            "valid_fraction" => self.valid_fraction = num(key, value)?,
            "valid_count" => {
                self.valid_count = if value.is_empty() {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "tokenizer" => {
                self.tokenizer = value.parse().map_err(|e: String| invalid(key, value, e))?
            }
            "min_count" => self.min_count = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "embeddings" => self.embeddings = (!value.is_empty()).then(|| path(value)),
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "l2" => self.train.l2 = num(key, value)?,
            "k" => self.scheduler.levels = num(key, value)?,
            "lambda" => self.scheduler.lambda = num(key, value)?,
            "omega_floor" => self.scheduler.omega_floor = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "reassign_period" => self.reassign_period = num(key, value)?,
            "seed" => {
                self.seed = num(key, value)?;
                self.train.seed = self.seed;
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (k, v, _) in parse_kv(text)? {
            cfg.set(&k, &v, base)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_kv_str(&text, path.parent())
    }

    /// Checks ranges and required keys.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key: &str, v: f64, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(key, &v.to_string(), reason))
            }
        };
        if self.train_path.is_none() {
            return Err(ConfigError::Missing("train"));
        }
        if self.test_path.is_none() {
            return Err(ConfigError::Missing("test"));
        }
        range("theta", self.theta, self.theta > 0.0 && self.theta <= 100.0, "must lie in (0, 100]")?;
        range(
            "valid_fraction",
            self.valid_fraction,
            self.valid_fraction > 0.0 && self.valid_fraction < 1.0,
            "must lie in (0, 1)",
        )?;
        range("lambda", self.scheduler.lambda, self.scheduler.lambda > 1.0, "must exceed 1")?;
        range(
            "omega_floor",
            self.scheduler.omega_floor,
            (0.0..1.0).contains(&self.scheduler.omega_floor),
            "must lie in [0, 1)",
        )?;
        range(
            "learning_rate",
            self.train.learning_rate,
            self.train.learning_rate >= 0.0 && self.train.learning_rate.is_finite(),
            "must be finite and non-negative",
        )?;
        range("l2", self.train.l2, self.train.l2 >= 0.0, "must be non-negative")?;
        let positive = |key: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(invalid(key, &v.to_string(), "must be at least 1"))
            }
        };
        positive("k", self.scheduler.levels)?;
        positive("reassign_period", self.reassign_period)?;
        positive("batch_size", self.train.batch_size)?;
        positive("dim", self.dim)?;
        positive("min_count", self.min_count)?;
        Ok(())
    }

    /// Canonical `key = value` rendering, one line per key in [`Self::KEYS`]
    /// order. Unset optional keys are written empty.
    pub fn to_kv(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: [String; 20] = [
            self.mode.to_string(),
            p(&self.train_path),
            p(&self.valid_path),
            p(&self.test_path),
            self.valid_fraction.to_string(),
            self.valid_count.map(|c| c.to_string()).unwrap_or_default(),
            match self.tokenizer {
                crate::data::TokenizeMode::Word => "word".into(),
                crate::data::TokenizeMode::Char => "char".into(),
            },
            self.min_count.to_string(),
            self.dim.to_string(),
            p(&self.embeddings),
            self.train.learning_rate.to_string(),
            self.train.batch_size.to_string(),
            self.train.epochs.to_string(),
            self.train.l2.to_string(),
            self.scheduler.levels.to_string(),
            self.scheduler.lambda.to_string(),
            self.scheduler.omega_floor.to_string(),
            self.theta.to_string(),
            self.reassign_period.to_string(),
            self.seed.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`Self::to_kv`].
    pub fn hash(&self) -> String {
        sha256_hex(self.to_kv().as_bytes())
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "curriculum" => Ok(Self::Curriculum),
            other => Err(format!("unknown mode `{other}` (expected baseline or curriculum)")),
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Curriculum => "curriculum",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let text = "# comment\nmode = baseline\ntrain = data/train.jsonl\ntest=/abs/test.jsonl\nk = 5\nseed = 9\n\n";
        let cfg = RunConfig::from_kv_str(text, Some(Path::new("/runs"))).unwrap();
        assert_eq!(cfg.mode, RunMode::Baseline);
        assert_eq!(cfg.train_path.as_deref(), Some(Path::new("/runs/data/train.jsonl")));
        assert_eq!(cfg.test_path.as_deref(), Some(Path::new("/abs/test.jsonl")));
        assert_eq!(cfg.scheduler.levels, 5);
        assert_eq!(cfg.train.seed, 9);
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(
            RunConfig::from_kv_str("bogus = 1", None).unwrap_err(),
            ConfigError::UnknownKey("bogus".into())
        );
        assert!(matches!(
            RunConfig::from_kv_str("epochs = many", None).unwrap_err(),
            ConfigError::InvalidValue { key, .. } if key == "epochs"
        ));
        assert_eq!(
            RunConfig::from_kv_str("just text", None).unwrap_err(),
            ConfigError::Syntax { line: 1 }
        );
        let cfg = RunConfig::from_kv_str("train = a\ntest = b\ntheta = 0", None).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::InvalidValue { key, .. }) if key == "theta"));
        let cfg = RunConfig::from_kv_str("test = b", None).unwrap();
        assert_eq!(cfg.validate(), Err(ConfigError::Missing("train")));
    }

    #[test]
    fn canonical_form_round_trips() {
        let text = "mode = curriculum\ntrain = t.jsonl\ntest = s.jsonl\nlambda = 1.5\nvalid_count = 50\nembeddings = e.jsonl\n";
        let cfg = RunConfig::from_kv_str(text, None).unwrap();
        let again = RunConfig::from_kv_str(&cfg.to_kv(), None).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
    }
}
