use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, BlobsConfig, Dataset, SplitSpec};
use crate::ensemble::{Method, DEFAULT_RIE_RUNS};
use crate::nnet::{ModelSpec, OutputActivation};
use crate::trainer::ValMetric;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs(BlobsConfig),
    Imbalanced {
        n: usize,
        positive_frac: f64,
        hardness: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        #[serde(default = "yes")]
        has_header: bool,
    },
}

fn default_label_column() -> String {
    "label".into()
}

fn yes() -> bool {
    true
}

impl DatasetSpec {
    /// Materializes the dataset. Relative CSV paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<Dataset> {
        match self {
            DatasetSpec::Blobs(cfg) => data::gen_blobs(cfg),
            DatasetSpec::Imbalanced {
                n,
                positive_frac,
                hardness,
                seed,
            } => data::gen_imbalanced_binary(*n, *positive_frac, *hardness, *seed),
            DatasetSpec::Csv {
                path,
                label_column,
                has_header,
            } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                data::load_csv(&path, label_column, *has_header)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    Accuracy,
    PrAuc,
}

impl EvalMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMetric::Accuracy => "accuracy",
            EvalMetric::PrAuc => "pr_auc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden layer widths.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Defaults to softmax.
    #[serde(default)]
    pub output: Option<OutputActivation>,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub early_stop_rounds: usize,
    #[serde(default = "default_val_metric")]
    pub val_metric: ValMetric,
}

fn default_batch_size() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    10
}
fn default_val_metric() -> ValMetric {
    ValMetric::Loss
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            early_stop_rounds: default_patience(),
            val_metric: default_val_metric(),
        }
    }
}

fn default_sweep() -> Vec<f64> {
    vec![0.1, 0.03, 0.01]
}
fn default_seeds() -> usize {
    5
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_rie_runs() -> usize {
    DEFAULT_RIE_RUNS
}
fn default_metrics() -> Vec<EvalMetric> {
    vec![EvalMetric::Accuracy]
}

/// One JSON document; everything but `dataset` and `output_dir` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    /// Learning rates.
    #[serde(default = "default_sweep")]
    pub sweep: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds_per_rate: usize,
    /// Base seed; every run's init and shuffle seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_rie_runs")]
    pub rie_runs: usize,
    #[serde(default = "default_metrics")]
    pub eval_metrics: Vec<EvalMetric>,
    /// Test-set bootstrap replicates per run; 0 disables the bootstrap.
    #[serde(default)]
    pub bootstrap_replicates: usize,
    /// Write run directories (checkpoints, traces, predictor manifests).
    #[serde(default = "yes")]
    pub keep_checkpoints: bool,
    /// Upper bound on concurrently trained runs (0 = one per core).
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one learning rate".into()));
        }
        if self.sweep.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.seeds_per_rate == 0 {
            return Err(Error::InvalidConfig("seeds_per_rate must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        if self.eval_metrics.is_empty() {
            return Err(Error::InvalidConfig("eval_metrics must not be empty".into()));
        }
        if self.methods.contains(&Method::Rie) && self.rie_runs == 0 {
            return Err(Error::InvalidConfig("rie_runs must be >= 1".into()));
        }
        if self.bootstrap_replicates == 1 {
            return Err(Error::InvalidConfig("bootstrap_replicates must be 0 or >= 2".into()));
        }
        if self.output_dir.is_none() {
            return Err(Error::InvalidConfig("output_dir is required".into()));
        }
        Ok(())
    }

    /// Methods in canonical order, deduplicated.
    pub fn methods_sorted(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }

    pub fn metrics_sorted(&self) -> Vec<EvalMetric> {
        let mut m = self.eval_metrics.clone();
        m.sort();
        m.dedup();
        m
    }

    /// Architecture for `ds` (seed filled in per run).
    pub fn model_spec(&self, ds: &Dataset) -> Result<ModelSpec> {
        let output = self.model.output.unwrap_or(OutputActivation::Softmax);
        let out_dim = match output {
            OutputActivation::Softmax => ds.class_count,
            OutputActivation::Sigmoid => {
                if ds.class_count != 2 {
                    return Err(Error::InvalidConfig(
                        "sigmoid output needs a binary dataset".into(),
                    ));
                }
                1
            }
        };
        let mut sizes = vec![ds.dims()];
        sizes.extend(&self.model.hidden);
        sizes.push(out_dim);
        ModelSpec::new(sizes, output, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "blobs", "classes": 3, "dims": 4, "per_class": 20, "spread": 1.0},
                "output_dir": "out"}"#,
        )
        .unwrap();
        assert_eq!(cfg.seeds_per_rate, 5);
        assert_eq!(cfg.rie_runs, 5);
        assert_eq!(cfg.methods, Method::ALL);
        assert_eq!(cfg.train.early_stop_rounds, 10);
        assert_eq!(cfg.model.hidden, [32]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn dataset_is_required() {
        assert!(ExperimentConfig::from_json(r#"{"output_dir": "x"}"#).is_err());
    }

    #[test]
    fn invalid_configs() {
        let base = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "imbalanced", "n": 500, "positive_frac": 0.1, "hardness": 0.2},
                "output_dir": "out"}"#,
        )
        .unwrap();
        assert!(ExperimentConfig { sweep: vec![], ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { methods: vec![], ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { seeds_per_rate: 0, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { output_dir: None, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { bootstrap_replicates: 1, ..base }.validate().is_err());
    }
}
