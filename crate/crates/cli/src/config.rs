//! Experiment configuration: JSON schema, validation, and dataset loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use osrkit_core::{load_mnist, make_synthetic_blobs, ImageTransform, LabeledDataset};

use crate::CliError;

/// Environment variable overriding the MNIST directory of any config.
pub const DATA_DIR_ENV: &str = "OSRKIT_DATA_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub protocol: Protocol,
    #[serde(default)]
    pub outlier_dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub outlier_transforms: Vec<ImageTransform>,
    #[serde(default = "default_true")]
    pub outlier_shuffle: bool,
    pub n_openness: usize,
    pub repeats: usize,
    pub n_folds: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub lower_stack: StackSpec,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub tunning: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// The four standard IDX files under `path`.
    Mnist { path: PathBuf },
    /// Deterministic blob images for tests and the outlier protocol.
    Synthetic {
        classes: usize,
        per_class: usize,
        depth: usize,
        img_size: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Holdout,
    Oneclass,
    Outlier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Tsoftmax {
        /// Rejection threshold; omit for the built-in default lookup.
        #[serde(default)]
        epsilon: Option<f64>,
    },
    Openmax {
        #[serde(default)]
        epsilon: Option<f64>,
        tail: usize,
        alpha: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StackSpec {
    Fc { n_out_channels: usize },
    Osrci { n_out_channels: usize },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {}", path.display(), e))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {}", path.display(), e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, msg: &str| Err(CliError::Validation(format!("{}: {}", name, msg)));
        if self.n_openness < 1 {
            return field("n_openness", "must be ≥ 1");
        }
        if self.repeats < 1 {
            return field("repeats", "must be ≥ 1");
        }
        if self.n_folds < 1 {
            return field("n_folds", "must be ≥ 1");
        }
        if self.epochs < 1 {
            return field("epochs", "must be ≥ 1");
        }
        if self.batch_size < 1 {
            return field("batch_size", "must be ≥ 1");
        }
        if !(self.learning_rate > 0.0) {
            return field("learning_rate", "must be > 0");
        }
        match &self.model {
            ModelSpec::Tsoftmax { epsilon } | ModelSpec::Openmax { epsilon, .. }
                if epsilon.map_or(false, |e| !(e > 0.0 && e < 1.0)) =>
            {
                return field("model.epsilon", "must lie in (0, 1)");
            }
            ModelSpec::Openmax { tail, alpha, .. } => {
                if *tail < 1 {
                    return field("model.tail", "must be ≥ 1");
                }
                if *alpha < 1 {
                    return field("model.alpha", "must be ≥ 1");
                }
            }
            _ => {}
        }
        match &self.lower_stack {
            StackSpec::Fc { n_out_channels } | StackSpec::Osrci { n_out_channels } => {
                if *n_out_channels < 1 {
                    return field("lower_stack.n_out_channels", "must be ≥ 1");
                }
            }
        }
        match self.dataset.validate() {
            Err(msg) => return field("dataset", &msg),
            Ok(()) => {}
        }
        if self.protocol == Protocol::Outlier {
            match &self.outlier_dataset {
                None => return field("outlier_dataset", "required for the outlier protocol"),
                Some(spec) => {
                    if let Err(msg) = spec.validate() {
                        return field("outlier_dataset", &msg);
                    }
                }
            }
        }
        Ok(())
    }
}

impl DatasetSpec {
    fn validate(&self) -> Result<(), String> {
        match self {
            DatasetSpec::Mnist { .. } => Ok(()),
            DatasetSpec::Synthetic {
                classes,
                per_class,
                depth,
                img_size,
                ..
            } => {
                if *classes < 1 || *per_class < 1 || *depth < 1 || *img_size < 1 {
                    Err("synthetic dimensions must all be ≥ 1".into())
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Materialize the dataset. `OSRKIT_DATA_DIR` overrides any MNIST path.
    pub fn load(&self) -> Result<LabeledDataset, CliError> {
        match self {
            DatasetSpec::Mnist { path } => {
                let dir = match std::env::var_os(DATA_DIR_ENV) {
                    Some(dir) => PathBuf::from(dir),
                    None => path.clone(),
                };
                load_mnist(&dir).map_err(|e| CliError::Runtime(e.to_string()))
            }
            DatasetSpec::Synthetic {
                classes,
                per_class,
                depth,
                img_size,
                seed,
            } => Ok(make_synthetic_blobs(
                *classes, *per_class, *depth, *img_size, *seed,
            )),
        }
    }
}
