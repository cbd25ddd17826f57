//! Final predictors built from one or more training traces.
//!
//! | method | members                                         | combined by       |
//! |--------|-------------------------------------------------|-------------------|
//! | MV     | best-scoring epoch                              | single model      |
//! | CE     | `k` best-scoring epochs                         | mean of outputs   |
//! | CS     | `k` best-scoring epochs                         | mean of weights   |
//! | LKS    | best epoch and up to 4 epochs right before it   | mean of weights   |
//! | RIE    | best epoch of each independent run              | mean of outputs   |
//!
//! `k` defaults to `min(a + 5, b, n)`, with `a` the early-stopping patience,
//! `b` the best epoch and `n` the number of epochs trained.

use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::nnet::{self, ModelSpec, WeightVector};
use crate::trainer::{order_by_score, TrainingTrace};
use crate::{Error, Result};

/// Window length of the last-k smoother.
pub const LKS_WINDOW: usize = 5;

/// Independent runs averaged by RIE unless configured otherwise.
pub const DEFAULT_RIE_RUNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Mv,
    Ce,
    Cs,
    Lks,
    Rie,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Mv, Method::Ce, Method::Cs, Method::Lks, Method::Rie];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mv => "MV",
            Method::Ce => "CE",
            Method::Cs => "CS",
            Method::Lks => "LKS",
            Method::Rie => "RIE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    SingleModel,
    PredictionAverage,
}

/// Where a member's weights came from: run index (0 for single-run
/// predictors) and epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub run: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePredictor {
    pub method: Method,
    pub kind: PredictorKind,
    pub spec: ModelSpec,
    /// One vector for `SingleModel`, one per averaged model otherwise.
    pub members: Vec<WeightVector>,
    /// Epochs that went into the predictor, best-first (or run order for RIE).
    pub sources: Vec<Source>,
    pub k: usize,
}

impl EnsemblePredictor {
    /// The materialized weights of a single-model predictor.
    pub fn weights(&self) -> Option<&WeightVector> {
        match self.kind {
            PredictorKind::SingleModel => self.members.first(),
            PredictorKind::PredictionAverage => None,
        }
    }

    /// Largest source epoch; the last epoch the predictor needed.
    pub fn max_epoch(&self) -> usize {
        self.sources.iter().map(|s| s.epoch).max().unwrap_or(0)
    }
}

/// `k = min(a + 5, b, n)`.
pub fn heuristic_k(a: usize, b: usize, n: usize) -> Result<usize> {
    if a == 0 || b == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "heuristic_k needs positive a, b, n (got a={a}, b={b}, n={n})"
        )));
    }
    if b > n {
        return Err(Error::InvalidArgument(format!("best epoch {b} exceeds n={n}")));
    }
    Ok((a + 5).min(b).min(n))
}

fn resolve_k(trace: &TrainingTrace, k: Option<usize>) -> Result<usize> {
    if trace.is_empty() {
        return Err(Error::Empty("training trace"));
    }
    match k {
        Some(k) if k == 0 || k > trace.n => Err(Error::InvalidArgument(format!(
            "k={k} outside 1..={}",
            trace.n
        ))),
        Some(k) => Ok(k),
        None => heuristic_k(trace.early_stop_rounds, trace.best_epoch, trace.n),
    }
}

fn source(epoch: usize) -> Source {
    Source { run: 0, epoch }
}

/// Minimum-validation selection.
pub fn select_mv(trace: &TrainingTrace) -> Result<EnsemblePredictor> {
    let best = order_by_score(trace)?[0];
    Ok(EnsemblePredictor {
        method: Method::Mv,
        kind: PredictorKind::SingleModel,
        spec: trace.spec.clone(),
        members: vec![best.weights.clone()],
        sources: vec![source(best.epoch)],
        k: 1,
    })
}

/// Checkpoint ensemble: output average of the `k` best snapshots.
pub fn build_ce(trace: &TrainingTrace, k: Option<usize>) -> Result<EnsemblePredictor> {
    let k = resolve_k(trace, k)?;
    let top = &order_by_score(trace)?[..k];
    Ok(EnsemblePredictor {
        method: Method::Ce,
        kind: PredictorKind::PredictionAverage,
        spec: trace.spec.clone(),
        members: top.iter().map(|s| s.weights.clone()).collect(),
        sources: top.iter().map(|s| source(s.epoch)).collect(),
        k,
    })
}

/// Elementwise mean, summed in list order.
pub fn average_weights<W: AsRef<WeightVector>>(members: &[W]) -> Result<WeightVector> {
    let first = members.first().ok_or(Error::Empty("weight vectors"))?.as_ref();
    let mut acc = first.0.clone();
    for m in &members[1..] {
        let m = m.as_ref();
        if m.len() != acc.len() {
            return Err(Error::Dimension(format!(
                "cannot average weight vectors of lengths {} and {}",
                acc.len(),
                m.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(&m.0) {
            *a += v;
        }
    }
    let k = members.len() as f64;
    for a in &mut acc {
        *a /= k;
    }
    Ok(WeightVector(acc))
}

impl AsRef<WeightVector> for WeightVector {
    fn as_ref(&self) -> &WeightVector {
        self
    }
}

/// Checkpoint smoother: weight average of the `k` best snapshots.
pub fn build_cs(trace: &TrainingTrace, k: Option<usize>) -> Result<EnsemblePredictor> {
    let k = resolve_k(trace, k)?;
    let top = &order_by_score(trace)?[..k];
    let weights: Vec<&WeightVector> = top.iter().map(|s| &s.weights).collect();
    Ok(EnsemblePredictor {
        method: Method::Cs,
        kind: PredictorKind::SingleModel,
        spec: trace.spec.clone(),
        members: vec![average_weights(&weights)?],
        sources: top.iter().map(|s| source(s.epoch)).collect(),
        k,
    })
}

/// Last-k smoother: weight average of epochs `b, b-1, …, max(1, b-4)`.
pub fn build_lks(trace: &TrainingTrace) -> Result<EnsemblePredictor> {
    if trace.is_empty() {
        return Err(Error::Empty("training trace"));
    }
    let b = trace.best_epoch;
    let lowest = b.saturating_sub(LKS_WINDOW - 1).max(1);
    let window = (lowest..=b)
        .rev()
        .map(|e| {
            trace.snapshot(e).ok_or_else(|| {
                Error::InvalidArgument(format!("trace has no snapshot for epoch {e}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<&WeightVector> = window.iter().map(|s| &s.weights).collect();
    Ok(EnsemblePredictor {
        method: Method::Lks,
        kind: PredictorKind::SingleModel,
        spec: trace.spec.clone(),
        members: vec![average_weights(&weights)?],
        sources: window.iter().map(|s| source(s.epoch)).collect(),
        k: window.len(),
    })
}

/// Random-initialization ensemble: output average of each run's MV model.
pub fn build_rie(traces: &[&TrainingTrace]) -> Result<EnsemblePredictor> {
    let mvs = traces.iter().map(|t| select_mv(t)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&EnsemblePredictor> = mvs.iter().collect();
    rie_from_mv(&refs)
}

/// RIE from already selected MV predictors, one per run.
pub fn rie_from_mv(mvs: &[&EnsemblePredictor]) -> Result<EnsemblePredictor> {
    let first = mvs.first().ok_or(Error::Empty("trace list"))?;
    let arch = first.spec.with_seed(0);
    let mut members = Vec::with_capacity(mvs.len());
    let mut sources = Vec::with_capacity(mvs.len());
    for (run, mv) in mvs.iter().enumerate() {
        if mv.spec.with_seed(0) != arch {
            return Err(Error::InvalidArgument(format!(
                "run {run} has a different model architecture"
            )));
        }
        if mv.method != Method::Mv || mv.members.len() != 1 {
            return Err(Error::InvalidArgument(format!("run {run} is not an MV predictor")));
        }
        sources.push(Source {
            run,
            epoch: mv.sources[0].epoch,
        });
        members.push(mv.members[0].clone());
    }
    Ok(EnsemblePredictor {
        method: Method::Rie,
        kind: PredictorKind::PredictionAverage,
        spec: first.spec.clone(),
        k: members.len(),
        members,
        sources,
    })
}

/// Output probabilities of the predictor.
///
/// Member forwards may run in parallel; their mean is always summed in member
/// order, so the result does not depend on `exec`.
pub fn predict(p: &EnsemblePredictor, inputs: &Matrix, exec: Execution) -> Result<Matrix> {
    if p.members.is_empty() {
        return Err(Error::Empty("predictor members"));
    }
    if p.kind == PredictorKind::SingleModel || p.members.len() == 1 {
        return nnet::forward(&p.spec, &p.members[0], inputs);
    }
    let outputs = exec.map_slice(&p.members, |w| nnet::forward(&p.spec, w, inputs));
    let mut outputs = outputs.into_iter();
    let mut acc = outputs.next().expect("non-empty")?;
    for out in outputs {
        let out = out?;
        for (a, v) in acc.as_mut_slice().iter_mut().zip(out.as_slice()) {
            *a += v;
        }
    }
    let k = p.members.len() as f64;
    for a in acc.as_mut_slice() {
        *a /= k;
    }
    Ok(acc)
}

pub const MANIFEST_FILE: &str = "predictor.json";
const AVERAGED_WEIGHTS_FILE: &str = "weights.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub run: usize,
    pub run_dir: String,
    pub epoch: usize,
    /// Checkpoint path relative to the manifest's directory.
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: Method,
    pub kind: PredictorKind,
    pub k: usize,
    pub model: ModelSpec,
    pub members: Vec<ManifestMember>,
    /// Materialized averaged weights (CS and LKS), relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<String>,
}

/// `target` expressed relative to directory `base`. Both must be rooted the
/// same way (both absolute, or both relative to the same directory).
fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let t: Vec<Component> = target.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    out
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Writes `predictor.json` into `dir`. `run_dirs[i]` is the run directory of
/// source run `i`, where the member checkpoints live. CS/LKS weights are also
/// written next to the manifest.
pub fn save_predictor(dir: &Path, p: &EnsemblePredictor, run_dirs: &[&Path]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let members = p
        .sources
        .iter()
        .map(|s| {
            let run_dir = run_dirs.get(s.run).ok_or_else(|| {
                Error::InvalidArgument(format!("no run directory for run {}", s.run))
            })?;
            let ckpt = crate::trainer::checkpoint_path(run_dir, s.epoch);
            Ok(ManifestMember {
                run: s.run,
                run_dir: path_string(&relative_path(run_dir, dir)),
                epoch: s.epoch,
                checkpoint: path_string(&relative_path(&ckpt, dir)),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let weights_file = match p.method {
        Method::Cs | Method::Lks => {
            let w = p.weights().ok_or(Error::Empty("smoothed weights"))?;
            nnet::write_weights(&dir.join(AVERAGED_WEIGHTS_FILE), w)?;
            Some(AVERAGED_WEIGHTS_FILE.to_string())
        }
        _ => None,
    };

    let manifest = Manifest {
        method: p.method,
        kind: p.kind,
        k: p.k,
        model: p.spec.clone(),
        members,
        weights_file,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a predictor from a manifest path (or its directory).
pub fn load_predictor(path: &Path) -> Result<EnsemblePredictor> {
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    m.model.validate()?;

    let members = match (&m.weights_file, m.kind) {
        (Some(f), _) => vec![nnet::read_weights(&dir.join(f))?],
        (None, PredictorKind::SingleModel) => {
            let first = m.members.first().ok_or(Error::Empty("manifest members"))?;
            vec![nnet::read_weights(&dir.join(&first.checkpoint))?]
        }
        (None, PredictorKind::PredictionAverage) => m
            .members
            .iter()
            .map(|mm| nnet::read_weights(&dir.join(&mm.checkpoint)))
            .collect::<Result<Vec<_>>>()?,
    };
    if members.is_empty() {
        return Err(Error::Empty("manifest members"));
    }
    let n_params = m.model.num_params();
    if let Some(w) = members.iter().find(|w| w.len() != n_params) {
        return Err(Error::Dimension(format!(
            "checkpoint has {} parameters, model needs {n_params}",
            w.len()
        )));
    }
    Ok(EnsemblePredictor {
        method: m.method,
        kind: m.kind,
        spec: m.model,
        members,
        sources: m
            .members
            .iter()
            .map(|mm| Source {
                run: mm.run,
                epoch: mm.epoch,
            })
            .collect(),
        k: m.k,
    })
}
