//! Epoch-based minibatch SGD with validation scoring, early stopping and
//! per-epoch checkpoints.
//!
//! A run directory holds `epoch_<k>.ckpt` for every completed epoch and a
//! `trace.json` describing the run. [`load_trace`] rebuilds the exact
//! [`TrainingTrace`] from it.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::nnet::{self, Batch, ModelSpec, OutputActivation, WeightVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValMetric {
    Loss,
    Accuracy,
}

impl ValMetric {
    pub fn direction(self) -> Direction {
        match self {
            ValMetric::Loss => Direction::LowerBetter,
            ValMetric::Accuracy => Direction::HigherBetter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

impl Direction {
    /// Strict improvement of `candidate` over `incumbent`.
    pub fn is_better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::LowerBetter => candidate < incumbent,
            Direction::HigherBetter => candidate > incumbent,
        }
    }

    /// Orders scores best-first.
    pub fn compare(self, a: f64, b: f64) -> Ordering {
        match self {
            Direction::LowerBetter => a.total_cmp(&b),
            Direction::HigherBetter => b.total_cmp(&a),
        }
    }
}

fn default_early_stop_rounds() -> usize {
    10
}

fn default_val_metric() -> ValMetric {
    ValMetric::Loss
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Patience `a`: stop once this many epochs pass without a strictly
    /// better validation score.
    #[serde(default = "default_early_stop_rounds")]
    pub early_stop_rounds: usize,
    #[serde(default = "default_val_metric")]
    pub val_metric: ValMetric,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.early_stop_rounds == 0 {
            return Err(Error::InvalidConfig("early_stop_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// 1-based.
    pub epoch: usize,
    pub weights: WeightVector,
    pub val_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub spec: ModelSpec,
    pub snapshots: Vec<Snapshot>,
    pub direction: Direction,
    pub early_stop_rounds: usize,
    /// Earliest epoch with the optimal validation score; 0 for an empty trace.
    pub best_epoch: usize,
    pub n: usize,
}

impl TrainingTrace {
    /// Builds a trace from snapshots in any order; they are stored by epoch.
    pub fn new(
        spec: ModelSpec,
        mut snapshots: Vec<Snapshot>,
        direction: Direction,
        early_stop_rounds: usize,
    ) -> Result<Self> {
        snapshots.sort_by_key(|s| s.epoch);
        if snapshots.windows(2).any(|w| w[0].epoch == w[1].epoch) {
            return Err(Error::InvalidArgument("duplicate epoch in trace".into()));
        }
        if snapshots.iter().any(|s| !s.val_score.is_finite()) {
            return Err(Error::InvalidArgument("non-finite validation score".into()));
        }
        let mut trace = Self {
            spec,
            n: snapshots.len(),
            snapshots,
            direction,
            early_stop_rounds,
            best_epoch: 0,
        };
        if trace.n > 0 {
            trace.best_epoch = best_epoch(&trace)?;
        }
        Ok(trace)
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshot(&self, epoch: usize) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&epoch, |s| s.epoch)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    pub fn val_scores(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.val_score).collect()
    }
}

/// Earliest epoch achieving the optimal validation score.
pub fn best_epoch(trace: &TrainingTrace) -> Result<usize> {
    let mut best: Option<&Snapshot> = None;
    for s in &trace.snapshots {
        match best {
            Some(b) if !trace.direction.is_better(s.val_score, b.val_score) => {}
            _ => best = Some(s),
        }
    }
    best.map(|s| s.epoch).ok_or(Error::Empty("training trace"))
}

/// Snapshots best-first; ties go to the earlier epoch.
pub fn order_by_score(trace: &TrainingTrace) -> Result<Vec<&Snapshot>> {
    if trace.is_empty() {
        return Err(Error::Empty("training trace"));
    }
    let mut ordered: Vec<&Snapshot> = trace.snapshots.iter().collect();
    ordered.sort_by(|a, b| {
        trace
            .direction
            .compare(a.val_score, b.val_score)
            .then(a.epoch.cmp(&b.epoch))
    });
    Ok(ordered)
}

/// Validation score of `w` under `metric`.
pub fn validation_score(
    spec: &ModelSpec,
    w: &WeightVector,
    val: &Batch,
    metric: ValMetric,
) -> Result<f64> {
    let probs = nnet::forward(spec, w, &val.inputs)?;
    match metric {
        ValMetric::Loss => Ok(nnet::loss_from_probs(
            spec.output_activation,
            &probs,
            &val.targets,
        )),
        ValMetric::Accuracy => {
            let labels = target_labels(spec.output_activation, val);
            metrics::accuracy(&metrics::class_probabilities(&probs), &labels)
        }
    }
}

fn target_labels(kind: OutputActivation, batch: &Batch) -> Vec<usize> {
    batch
        .targets
        .iter_rows()
        .map(|t| match kind {
            OutputActivation::Sigmoid => usize::from(t[0] >= 0.5),
            OutputActivation::Softmax => metrics::argmax(t),
        })
        .collect()
}

pub fn sgd_step(w: &mut WeightVector, grad: &WeightVector, learning_rate: f64) {
    for (wi, gi) in w.0.iter_mut().zip(&grad.0) {
        *wi -= learning_rate * gi;
    }
}

pub fn checkpoint_path(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join(format!("epoch_{epoch}.ckpt"))
}

/// Trains from `init_weights(spec)`, keeping one snapshot per epoch.
///
/// When `run_dir` is given every snapshot is written as it completes and
/// `trace.json` is written at the end, including after divergence.
pub fn train(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train: &Batch,
    val: &Batch,
    run_dir: Option<&Path>,
) -> Result<TrainingTrace> {
    spec.validate()?;
    cfg.validate()?;
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let direction = cfg.val_metric.direction();
    let mut w = nnet::init_weights(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut best: Option<(usize, f64)> = None;

    let finish = |snapshots: Vec<Snapshot>| -> Result<TrainingTrace> {
        let trace = TrainingTrace::new(spec.clone(), snapshots, direction, cfg.early_stop_rounds)?;
        if let Some(dir) = run_dir {
            write_trace_json(dir, &trace, Some(cfg))?;
        }
        Ok(trace)
    };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mb = train.select(chunk);
            let g = nnet::gradient(spec, &w, &mb)?;
            sgd_step(&mut w, &g, cfg.learning_rate);
        }

        let score = if w.is_finite() {
            validation_score(spec, &w, val, cfg.val_metric)?
        } else {
            f64::NAN
        };
        if !score.is_finite() {
            let partial = finish(snapshots)?;
            return Err(Error::NonFinite {
                epoch,
                partial: Box::new(partial),
            });
        }

        if let Some(dir) = run_dir {
            nnet::write_weights(&checkpoint_path(dir, epoch), &w)?;
        }
        snapshots.push(Snapshot {
            epoch,
            weights: w.clone(),
            val_score: score,
        });

        match best {
            Some((_, b)) if !direction.is_better(score, b) => {}
            _ => best = Some((epoch, score)),
        }
        let (best_ep, _) = best.expect("set above");
        if epoch - best_ep >= cfg.early_stop_rounds {
            break;
        }
    }
    finish(snapshots)
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceFile {
    epochs: Vec<usize>,
    val_scores: Vec<f64>,
    direction: Direction,
    early_stop_rounds: usize,
    best_epoch: usize,
    n: usize,
    model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<TrainConfig>,
}

pub const TRACE_FILE: &str = "trace.json";

pub fn write_trace_json(run_dir: &Path, trace: &TrainingTrace, cfg: Option<&TrainConfig>) -> Result<()> {
    let file = TraceFile {
        epochs: trace.snapshots.iter().map(|s| s.epoch).collect(),
        val_scores: trace.val_scores(),
        direction: trace.direction,
        early_stop_rounds: trace.early_stop_rounds,
        best_epoch: trace.best_epoch,
        n: trace.n,
        model: trace.spec.clone(),
        config: cfg.cloned(),
    };
    let path = run_dir.join(TRACE_FILE);
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Saves a finished trace (all checkpoints plus `trace.json`).
pub fn save_trace(run_dir: &Path, trace: &TrainingTrace) -> Result<()> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    for s in &trace.snapshots {
        nnet::write_weights(&checkpoint_path(run_dir, s.epoch), &s.weights)?;
    }
    write_trace_json(run_dir, trace, None)
}

/// Rebuilds a trace from a run directory.
pub fn load_trace(run_dir: &Path) -> Result<TrainingTrace> {
    let path = run_dir.join(TRACE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: TraceFile = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if file.epochs.len() != file.val_scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: epochs and val_scores differ in length",
            path.display()
        )));
    }
    let snapshots = file
        .epochs
        .iter()
        .zip(&file.val_scores)
        .map(|(&epoch, &val_score)| {
            Ok(Snapshot {
                epoch,
                weights: nnet::read_weights(&checkpoint_path(run_dir, epoch))?,
                val_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let trace = TrainingTrace::new(file.model, snapshots, file.direction, file.early_stop_rounds)?;
    if trace.best_epoch != file.best_epoch || trace.n != file.n {
        return Err(Error::InvalidArgument(format!(
            "{}: stored best_epoch/n disagree with the scores",
            path.display()
        )));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::trace_from_weights;

    fn trace_from_scores(scores: &[f64], direction: Direction) -> TrainingTrace {
        trace_from_weights(scores, direction, 10)
    }

    fn epochs(v: &[&Snapshot]) -> Vec<usize> {
        v.iter().map(|s| s.epoch).collect()
    }

    #[test]
    fn best_epoch_examples() {
        use Direction::*;
        assert_eq!(best_epoch(&trace_from_scores(&[0.5, 0.3, 0.4], LowerBetter)).unwrap(), 2);
        assert_eq!(best_epoch(&trace_from_scores(&[0.3, 0.3, 0.4], LowerBetter)).unwrap(), 1);
        assert_eq!(best_epoch(&trace_from_scores(&[0.1, 0.2, 0.9], HigherBetter)).unwrap(), 3);
        assert!(matches!(
            best_epoch(&trace_from_scores(&[], LowerBetter)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn order_by_score_examples() {
        use Direction::*;
        let t = trace_from_scores(&[0.5, 0.3, 0.4], LowerBetter);
        assert_eq!(epochs(&order_by_score(&t).unwrap()), [2, 3, 1]);
        let t = trace_from_scores(&[0.7; 5], LowerBetter);
        assert_eq!(epochs(&order_by_score(&t).unwrap()), [1, 2, 3, 4, 5]);
        let t = trace_from_scores(&[0.2, 0.8], HigherBetter);
        assert_eq!(epochs(&order_by_score(&t).unwrap()), [2, 1]);
        assert!(order_by_score(&trace_from_scores(&[], HigherBetter)).is_err());
    }

    #[test]
    fn trace_rejects_duplicate_epochs() {
        let spec = ModelSpec::new(vec![1, 1], OutputActivation::Sigmoid, 0).unwrap();
        let s = Snapshot {
            epoch: 1,
            weights: WeightVector::zeros(2),
            val_score: 0.1,
        };
        assert!(TrainingTrace::new(spec, vec![s.clone(), s], Direction::LowerBetter, 3).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig {
            learning_rate: 0.1,
            batch_size: 4,
            max_epochs: 3,
            early_stop_rounds: 10,
            val_metric: ValMetric::Loss,
            shuffle_seed: 0,
        };
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { max_epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { early_stop_rounds: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
    }
}
