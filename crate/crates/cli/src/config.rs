//! Experiment configuration: a TOML file with flat keys inside
//! `[data]`, `[model]`, `[train]`, and `[output]` sections. Every field has a
//! default; command-line flags override config keys; the fully resolved
//! config is echoed into the output directory next to the results.

use kanpca::train::{BatchMode, InitKind, StageConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io { path: String, #[source] source: std::io::Error },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Wide CSV: first column ISO dates, one column per ticker.
    pub path: PathBuf,
    /// "wide_returns" (log-returns as-is) or "wide_prices" (levels, converted
    /// to log-returns on load).
    pub schema: String,
    /// Chronological train/validation/test fractions.
    pub split: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("returns.csv"),
            schema: "wide_returns".into(),
            split: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Encoder widths including input and bottleneck, e.g. [20, 10, 3].
    pub architecture: Vec<usize>,
    pub degree: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { architecture: vec![20, 10, 3], degree: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub seed: u64,
    pub affine: bool,
    /// "random" or "pca".
    pub init: String,
    /// Grid intervals per stage.
    pub grids: Vec<usize>,
    /// Spline L1 penalty per stage (same length as `grids`).
    pub spline_penalties: Vec<f64>,
    pub entropy_penalty: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// 0 = full batch, otherwise the minibatch size.
    pub minibatch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            seed: 42,
            affine: false,
            init: "random".into(),
            grids: vec![3, 5, 10],
            spline_penalties: vec![1e-3, 3e-4, 1e-4],
            entropy_penalty: 0.1,
            max_epochs: 500,
            patience: 20,
            minibatch: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Deterministic mode: logical audit timestamps, no wall-clock metadata,
    /// byte-identical outputs for identical inputs and seed.
    pub deterministic: bool,
    /// Sample count per curve for `export-edges`.
    pub edge_samples: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), deterministic: false, edge_samples: 200 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

/// Command-line overrides shared by the fitting commands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub affine: bool,
    pub k: Option<usize>,
    pub grids: Option<Vec<usize>>,
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                Ok(toml::from_str(&text)?)
            }
        }
    }

    /// Apply flag overrides and validate. Flags always win over config keys.
    pub fn resolve(mut self, ov: &Overrides) -> Result<Self, ConfigError> {
        if let Some(data) = &ov.data {
            self.data.path = data.clone();
        }
        if let Some(out) = &ov.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = ov.seed {
            self.train.seed = seed;
        }
        if ov.affine {
            self.train.affine = true;
        }
        if let Some(k) = ov.k {
            let last = self.model.architecture.len() - 1;
            self.model.architecture[last] = k;
        }
        if let Some(grids) = &ov.grids {
            self.train.grids = grids.clone();
            if self.train.spline_penalties.len() != grids.len() {
                // Keep the first configured penalty for every stage when the
                // stage count changes via the flag.
                let p = self.train.spline_penalties.first().copied().unwrap_or(1e-3);
                self.train.spline_penalties = vec![p; grids.len()];
            }
        }
        if ov.deterministic {
            self.output.deterministic = true;
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.model.architecture.len() < 2 {
            return Err(ConfigError::Invalid("architecture needs at least [N, k]".into()));
        }
        if self.model.architecture.iter().any(|&d| d == 0) {
            return Err(ConfigError::Invalid("architecture widths must be positive".into()));
        }
        if self.train.grids.is_empty() {
            return Err(ConfigError::Invalid("at least one grid stage required".into()));
        }
        if self.train.grids.len() != self.train.spline_penalties.len() {
            return Err(ConfigError::Invalid(format!(
                "grids ({}) and spline_penalties ({}) must have the same length",
                self.train.grids.len(),
                self.train.spline_penalties.len()
            )));
        }
        match self.data.schema.as_str() {
            "wide_returns" | "wide_prices" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "schema must be wide_returns or wide_prices, got {other:?}"
                )))
            }
        }
        match self.train.init.as_str() {
            "random" | "pca" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "init must be random or pca, got {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> kanpca::pipeline::CsvSchema {
        match self.data.schema.as_str() {
            "wide_prices" => kanpca::pipeline::CsvSchema::WidePrices,
            _ => kanpca::pipeline::CsvSchema::WideReturns,
        }
    }

    pub fn k(&self) -> usize {
        *self.model.architecture.last().unwrap()
    }

    pub fn to_train_config(&self) -> TrainConfig {
        let stages = self
            .train
            .grids
            .iter()
            .zip(&self.train.spline_penalties)
            .map(|(&grid_intervals, &spline_penalty)| StageConfig {
                grid_intervals,
                spline_penalty,
                entropy_penalty: self.train.entropy_penalty,
                max_epochs: self.train.max_epochs,
                patience: self.train.patience,
            })
            .collect();
        TrainConfig {
            encoder_dims: self.model.architecture.clone(),
            degree: self.model.degree,
            stages,
            learning_rate: self.train.learning_rate,
            batch_mode: if self.train.minibatch == 0 {
                BatchMode::Full
            } else {
                BatchMode::Minibatch(self.train.minibatch)
            },
            seed: self.train.seed,
            affine: self.train.affine,
            init: if self.train.init == "pca" { InitKind::Pca } else { InitKind::Random },
        }
    }

    /// Hash over the experiment-defining sections (data, model, train); the
    /// output section carries no modeling content and is excluded so that
    /// redirecting results does not change the hash.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            data: &'a DataSection,
            model: &'a ModelSection,
            train: &'a TrainSection,
        }
        let canon = toml::to_string(&Hashed {
            data: &self.data,
            model: &self.model,
            train: &self.train,
        })
        .expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse a `--grid` flag value like "5" or "3,5,10".
pub fn parse_grid_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|part| part.trim().parse::<usize>().map_err(|_| format!("bad grid size {part:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_changes_with_edits() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.train.grids, vec![3, 5, 10]);
        assert_eq!(back.train.spline_penalties, vec![1e-3, 3e-4, 1e-4]);
        let h1 = cfg.hash();
        let mut edited = cfg.clone();
        edited.train.seed = 43;
        assert_ne!(h1, edited.hash());
        // The output section does not contribute to the hash.
        let mut moved = cfg.clone();
        moved.output.dir = PathBuf::from("elsewhere");
        assert_eq!(h1, moved.hash());
    }

    #[test]
    fn overrides_win_and_are_validated() {
        let cfg = ExperimentConfig::default();
        let ov = Overrides {
            seed: Some(7),
            k: Some(4),
            grids: Some(vec![5]),
            affine: true,
            deterministic: true,
            ..Default::default()
        };
        let resolved = cfg.resolve(&ov).unwrap();
        assert_eq!(resolved.train.seed, 7);
        assert_eq!(*resolved.model.architecture.last().unwrap(), 4);
        assert_eq!(resolved.train.grids, vec![5]);
        assert_eq!(resolved.train.spline_penalties.len(), 1);
        assert!(resolved.train.affine);
        assert!(resolved.output.deterministic);

        let bad = ExperimentConfig {
            train: TrainSection { grids: vec![3, 5], spline_penalties: vec![1e-3], ..Default::default() },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grid_flag_parsing() {
        assert_eq!(parse_grid_list("3,5,10").unwrap(), vec![3, 5, 10]);
        assert_eq!(parse_grid_list(" 7 ").unwrap(), vec![7]);
        assert!(parse_grid_list("3,x").is_err());
    }
}
