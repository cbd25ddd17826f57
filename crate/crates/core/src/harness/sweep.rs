use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{EvalMetric, ExperimentConfig};
use crate::data::Dataset;
use crate::ensemble::{self, EnsemblePredictor, Method};
use crate::exec::{mix_seed, Execution};
use crate::matrix::Matrix;
use crate::metrics;
use crate::nnet::{Batch, ModelSpec};
use crate::stats::{self, TTestResult};
use crate::trainer::{self, TrainConfig};
use crate::{Error, Result};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SWEEP_HEADER: &str =
    "learning_rate,seed,method,metric,value,best_epoch,total_epochs,k_used";

/// One evaluated (rate, seed, method, metric) cell. RIE rows have no seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub learning_rate: f64,
    pub seed: Option<usize>,
    pub method: Method,
    pub metric: EvalMetric,
    pub value: f64,
    pub best_epoch: usize,
    pub total_epochs: usize,
    pub k_used: usize,
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let seed = r.seed.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.learning_rate,
            seed,
            r.method,
            r.metric.as_str(),
            r.value,
            r.best_epoch,
            r.total_epochs,
            r.k_used
        );
    }
    s
}

/// Evaluates `metric` on predicted probabilities against class labels.
pub fn evaluate(metric: EvalMetric, probs: &Matrix, labels: &[usize]) -> Result<f64> {
    match metric {
        EvalMetric::Accuracy => metrics::accuracy(&metrics::class_probabilities(probs), labels),
        EvalMetric::PrAuc => {
            let scores = metrics::positive_scores(probs)?;
            let positives: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
            Ok(metrics::pr_curve(&scores, &positives)?.auc)
        }
    }
}

/// Bootstrap spread of one method's test metric, and of its paired
/// difference to MV over the same resamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCell {
    pub method: Method,
    pub metric: EvalMetric,
    pub stddev: f64,
    pub gain_stddev: Option<f64>,
}

/// Everything one training run contributes to the sweep.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub rate_index: usize,
    pub seed: usize,
    pub rows: Vec<SweepRow>,
    pub mv: EnsemblePredictor,
    pub best_epoch: usize,
    pub total_epochs: usize,
    /// Last epoch each method needed (MV/LKS: b; CE/CS: latest member).
    pub convergence: BTreeMap<Method, usize>,
    pub bootstrap: Vec<BootstrapCell>,
    pub run_dir: Option<PathBuf>,
}

/// Data and architecture shared by every run of an experiment.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub arch: ModelSpec,
    pub train: Batch,
    pub val: Batch,
    pub test: Dataset,
    pub output_dir: PathBuf,
}

impl Prepared {
    /// Loads and splits the dataset. `base` resolves relative CSV paths.
    pub fn new(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let ds = cfg.dataset.load(base)?;
        if cfg.eval_metrics.contains(&EvalMetric::PrAuc) && ds.class_count != 2 {
            return Err(Error::InvalidConfig("pr_auc needs a binary dataset".into()));
        }
        let (train, val, test) = crate::data::split(&ds, &cfg.split)?;
        let arch = cfg.model_spec(&ds)?;
        Ok(Self {
            train: train.to_batch(&arch)?,
            val: val.to_batch(&arch)?,
            test,
            arch,
            output_dir: cfg.output_dir.clone().expect("validated"),
            cfg: cfg.clone(),
        })
    }

    /// Initialization and shuffle seeds of seed index `s`; shared across
    /// learning rates so only the rate varies within a seed.
    pub fn run_seeds(&self, s: usize) -> (u64, u64) {
        let s = s as u64;
        (mix_seed(self.cfg.seed, 2 * s), mix_seed(self.cfg.seed, 2 * s + 1))
    }

    fn train_config(&self, rate: f64, shuffle_seed: u64) -> TrainConfig {
        let t = &self.cfg.train;
        TrainConfig {
            learning_rate: rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_rounds: t.early_stop_rounds,
            val_metric: t.val_metric,
            shuffle_seed,
        }
    }

    fn bootstrap_seed(&self, rate_index: usize, seed: usize) -> u64 {
        mix_seed(mix_seed(self.cfg.seed ^ 0xB007, rate_index as u64), seed as u64)
    }

    /// Trains one run and evaluates every requested single-run method on it.
    pub fn run_cell(
        &self,
        rate_index: usize,
        seed: usize,
        run_dir: Option<&Path>,
        exec: Execution,
    ) -> Result<CellOutcome> {
        let rate = self.cfg.sweep[rate_index];
        let (init_seed, shuffle_seed) = self.run_seeds(seed);
        let spec = self.arch.with_seed(init_seed);
        let tc = self.train_config(rate, shuffle_seed);
        let trace = trainer::train(&spec, &tc, &self.train, &self.val, run_dir)?;

        let metrics_list = self.cfg.metrics_sorted();
        let mut rows = Vec::new();
        let mut convergence = BTreeMap::new();
        let mut probs_by_method: Vec<(Method, Matrix)> = Vec::new();
        let mv = ensemble::select_mv(&trace)?;

        for method in self.cfg.methods_sorted() {
            let predictor = match method {
                Method::Mv => mv.clone(),
                Method::Ce => ensemble::build_ce(&trace, None)?,
                Method::Cs => ensemble::build_cs(&trace, None)?,
                Method::Lks => ensemble::build_lks(&trace)?,
                Method::Rie => continue,
            };
            let probs = ensemble::predict(&predictor, &self.test.inputs, exec)?;
            for &metric in &metrics_list {
                rows.push(SweepRow {
                    learning_rate: rate,
                    seed: Some(seed),
                    method,
                    metric,
                    value: evaluate(metric, &probs, &self.test.labels)?,
                    best_epoch: trace.best_epoch,
                    total_epochs: trace.n,
                    k_used: predictor.k,
                });
            }
            let conv = match method {
                Method::Ce | Method::Cs => predictor.max_epoch(),
                _ => trace.best_epoch,
            };
            convergence.insert(method, conv);
            if let Some(dir) = run_dir {
                ensemble::save_predictor(&dir.join("predictors").join(method.as_str()), &predictor, &[dir])?;
                if metrics_list.contains(&EvalMetric::PrAuc) {
                    let curve = metrics::pr_curve(
                        &metrics::positive_scores(&probs)?,
                        &self.test.binary_labels(),
                    )?;
                    metrics::write_pr_curve(&dir.join(format!("pr_{method}.csv")), &curve)?;
                }
            }
            probs_by_method.push((method, probs));
        }

        let bootstrap = if self.cfg.bootstrap_replicates >= 2 {
            self.bootstrap_cell(&probs_by_method, self.bootstrap_seed(rate_index, seed), exec)?
        } else {
            Vec::new()
        };

        Ok(CellOutcome {
            rate_index,
            seed,
            rows,
            mv,
            best_epoch: trace.best_epoch,
            total_epochs: trace.n,
            convergence,
            bootstrap,
            run_dir: run_dir.map(Path::to_path_buf),
        })
    }

    fn bootstrap_cell(
        &self,
        probs_by_method: &[(Method, Matrix)],
        seed: u64,
        exec: Execution,
    ) -> Result<Vec<BootstrapCell>> {
        let idx: Vec<usize> = (0..self.test.len()).collect();
        let labels = &self.test.labels;
        let b = self.cfg.bootstrap_replicates;
        let mv_probs = probs_by_method
            .iter()
            .find(|(m, _)| *m == Method::Mv)
            .map(|(_, p)| p);
        let on_rows = |metric: EvalMetric, probs: &Matrix, rows: &[usize]| {
            let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            evaluate(metric, &probs.select_rows(rows), &y)
        };

        let mut out = Vec::new();
        for (method, probs) in probs_by_method {
            for metric in self.cfg.metrics_sorted() {
                // Same seed for every method: replicate r resamples the same rows.
                let single = stats::bootstrap_metric(
                    &idx,
                    &idx,
                    |rows: &[usize], _: &[usize]| on_rows(metric, probs, rows),
                    b,
                    seed,
                    exec,
                )?;
                let gain_stddev = match mv_probs {
                    Some(mvp) if *method != Method::Mv => Some(
                        stats::bootstrap_metric(
                            &idx,
                            &idx,
                            |rows: &[usize], _: &[usize]| {
                                Ok(on_rows(metric, probs, rows)? - on_rows(metric, mvp, rows)?)
                            },
                            b,
                            seed,
                            exec,
                        )?
                        .stddev,
                    ),
                    _ => None,
                };
                out.push(BootstrapCell {
                    method: *method,
                    metric,
                    stddev: single.stddev,
                    gain_stddev,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Mean test metric over this rate's runs.
    pub mean: BTreeMap<EvalMetric, f64>,
    /// Mean of per-run (method − MV) differences.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diff_vs_mv: BTreeMap<EvalMetric, f64>,
    pub convergence_epochs: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bootstrap_std: BTreeMap<EvalMetric, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gain_bootstrap_std: BTreeMap<EvalMetric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub learning_rate: f64,
    pub runs: usize,
    pub mean_best_epoch: f64,
    pub methods: BTreeMap<Method, MethodSummary>,
    /// CE − MV, when both were run.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gain: BTreeMap<EvalMetric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestEntry {
    pub method: Method,
    pub metric: EvalMetric,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TTestResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub learning_rate: f64,
    pub seed: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub methods: Vec<Method>,
    pub metrics: Vec<EvalMetric>,
    pub rates: Vec<RateSummary>,
    pub t_tests: Vec<TTestEntry>,
    #[serde(default)]
    pub failures: Vec<Failure>,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summary: Summary,
    pub cells: Vec<CellOutcome>,
}

/// Confidence level of the paired t-tests.
pub const T_TEST_CONFIDENCE: f64 = 0.95;

fn cell_dir(out: &Path, rate_index: usize, seed: usize) -> PathBuf {
    out.join("runs").join(format!("lr{rate_index}_seed{seed}"))
}

/// Trains one run (first learning rate, seed index 0) into `output_dir`
/// and writes its rows to `sweep.csv`.
pub fn run_single(cfg: &ExperimentConfig, base: Option<&Path>, exec: Execution) -> Result<(PathBuf, Vec<SweepRow>)> {
    let prep = Prepared::new(cfg, base)?;
    let out = prep.output_dir.clone();
    let outcome = prep.run_cell(0, 0, Some(&out), exec)?;
    write_file(&out.join(SWEEP_CSV), &rows_to_csv(&outcome.rows))?;
    Ok((out, outcome.rows))
}

/// Full protocol: every (rate, seed) run, RIE per rate, summary and t-tests.
/// Writes `sweep.csv` and `summary.json` into the output directory.
pub fn run_sweep(cfg: &ExperimentConfig, base: Option<&Path>, exec: Execution) -> Result<SweepOutcome> {
    let prep = Prepared::new(cfg, base)?;
    let out = prep.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let cells: Vec<(usize, usize)> = (0..cfg.sweep.len())
        .flat_map(|r| (0..cfg.seeds_per_rate).map(move |s| (r, s)))
        .collect();
    let results = exec.with_jobs(cfg.jobs, || {
        exec.map_slice(&cells, |&(r, s)| {
            let dir = cfg.keep_checkpoints.then(|| cell_dir(&out, r, s));
            prep.run_cell(r, s, dir.as_deref(), exec)
        })
    });

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (&(r, s), res) in cells.iter().zip(results) {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(Failure {
                learning_rate: cfg.sweep[r],
                seed: s,
                error: e.to_string(),
            }),
        }
    }

    let methods = cfg.methods_sorted();
    let metrics_list = cfg.metrics_sorted();
    let mut rie_rows: Vec<Vec<SweepRow>> = vec![Vec::new(); cfg.sweep.len()];
    let mut rie_mv_means: Vec<BTreeMap<EvalMetric, f64>> = vec![BTreeMap::new(); cfg.sweep.len()];
    if methods.contains(&Method::Rie) {
        for (r, rows_out) in rie_rows.iter_mut().enumerate() {
            let members: Vec<&CellOutcome> = outcomes
                .iter()
                .filter(|o| o.rate_index == r)
                .take(cfg.rie_runs)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mvs: Vec<&EnsemblePredictor> = members.iter().map(|o| &o.mv).collect();
            let rie = ensemble::rie_from_mv(&mvs)?;
            let probs = ensemble::predict(&rie, &prep.test.inputs, exec)?;
            for &metric in &metrics_list {
                rows_out.push(SweepRow {
                    learning_rate: cfg.sweep[r],
                    seed: None,
                    method: Method::Rie,
                    metric,
                    value: evaluate(metric, &probs, &prep.test.labels)?,
                    best_epoch: members.iter().map(|o| o.best_epoch).sum(),
                    total_epochs: members.iter().map(|o| o.total_epochs).sum(),
                    k_used: members.len(),
                });
                if let Some(mean_mv) = mean_of(members.iter().filter_map(|o| {
                    o.rows
                        .iter()
                        .find(|row| row.method == Method::Mv && row.metric == metric)
                        .map(|row| row.value)
                })) {
                    rie_mv_means[r].insert(metric, mean_mv);
                }
            }
            if cfg.keep_checkpoints {
                let dirs: Vec<&Path> = members.iter().filter_map(|o| o.run_dir.as_deref()).collect();
                ensemble::save_predictor(&out.join("rie").join(format!("lr{r}")), &rie, &dirs)?;
            }
        }
    }

    let mut rows = Vec::new();
    for r in order_rates(&cfg.sweep) {
        for o in outcomes.iter().filter(|o| o.rate_index == r) {
            rows.extend(o.rows.iter().cloned());
        }
        rows.extend(rie_rows[r].iter().cloned());
    }

    let summary = summarize(cfg, &outcomes, &rie_rows, &rie_mv_means, failures);
    write_file(&out.join(SWEEP_CSV), &rows_to_csv(&rows))?;
    let summary_path = out.join(SUMMARY_JSON);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&summary_path, e))?;
    write_file(&summary_path, &(text + "\n"))?;

    Ok(SweepOutcome {
        rows,
        summary,
        cells: outcomes,
    })
}

/// Rate indices sorted by rate value, ascending (stable for duplicates).
fn order_rates(sweep: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sweep.len()).collect();
    idx.sort_by(|&a, &b| sweep[a].total_cmp(&sweep[b]));
    idx
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| stats::mean(&v))
}

fn summarize(
    cfg: &ExperimentConfig,
    outcomes: &[CellOutcome],
    rie_rows: &[Vec<SweepRow>],
    rie_mv_means: &[BTreeMap<EvalMetric, f64>],
    failures: Vec<Failure>,
) -> Summary {
    let methods = cfg.methods_sorted();
    let metrics_list = cfg.metrics_sorted();
    let value = |o: &CellOutcome, m: Method, metric: EvalMetric| {
        o.rows
            .iter()
            .find(|r| r.method == m && r.metric == metric)
            .map(|r| r.value)
    };

    let mut rates = Vec::new();
    for r in order_rates(&cfg.sweep) {
        let cells: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.rate_index == r).collect();
        let mut per_method = BTreeMap::new();
        for &m in &methods {
            let mut ms = MethodSummary::default();
            if m == Method::Rie {
                if rie_rows[r].is_empty() {
                    continue;
                }
                for row in &rie_rows[r] {
                    ms.mean.insert(row.metric, row.value);
                    if let Some(mv) = rie_mv_means[r].get(&row.metric) {
                        ms.diff_vs_mv.insert(row.metric, row.value - mv);
                    }
                    ms.convergence_epochs = row.best_epoch as f64;
                }
            } else {
                if cells.is_empty() {
                    continue;
                }
                for &metric in &metrics_list {
                    if let Some(v) = mean_of(cells.iter().filter_map(|o| value(o, m, metric))) {
                        ms.mean.insert(metric, v);
                    }
                    if methods.contains(&Method::Mv) {
                        let diffs = cells
                            .iter()
                            .filter_map(|o| Some(value(o, m, metric)? - value(o, Method::Mv, metric)?));
                        if let Some(d) = mean_of(diffs) {
                            ms.diff_vs_mv.insert(metric, d);
                        }
                    }
                    let boot = |f: fn(&BootstrapCell) -> Option<f64>| {
                        mean_of(cells.iter().flat_map(|o| {
                            o.bootstrap
                                .iter()
                                .filter(|b| b.method == m && b.metric == metric)
                                .filter_map(f)
                        }))
                    };
                    if let Some(s) = boot(|b| Some(b.stddev)) {
                        ms.bootstrap_std.insert(metric, s);
                    }
                    if let Some(s) = boot(|b| b.gain_stddev) {
                        ms.gain_bootstrap_std.insert(metric, s);
                    }
                }
                ms.convergence_epochs =
                    mean_of(cells.iter().filter_map(|o| o.convergence.get(&m).map(|&e| e as f64)))
                        .unwrap_or(0.0);
            }
            per_method.insert(m, ms);
        }
        let gain = per_method
            .get(&Method::Ce)
            .map(|ce| ce.diff_vs_mv.clone())
            .unwrap_or_default();
        rates.push(RateSummary {
            learning_rate: cfg.sweep[r],
            runs: cells.len(),
            mean_best_epoch: mean_of(cells.iter().map(|o| o.best_epoch as f64)).unwrap_or(0.0),
            methods: per_method,
            gain,
        });
    }

    let mut t_tests = Vec::new();
    if methods.contains(&Method::Mv) {
        for &m in &methods {
            for &metric in &metrics_list {
                let diffs: Vec<f64> = if m == Method::Rie {
                    (0..cfg.sweep.len())
                        .filter_map(|r| {
                            let rie = rie_rows[r].iter().find(|row| row.metric == metric)?;
                            Some(rie.value - rie_mv_means[r].get(&metric)?)
                        })
                        .collect()
                } else {
                    outcomes
                        .iter()
                        .filter_map(|o| Some(value(o, m, metric)? - value(o, Method::Mv, metric)?))
                        .collect()
                };
                let (result, error) = match stats::t_test_one_sample(&diffs, T_TEST_CONFIDENCE) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                t_tests.push(TTestEntry {
                    method: m,
                    metric,
                    samples: diffs.len(),
                    result,
                    error,
                });
            }
        }
    }

    Summary {
        methods,
        metrics: metrics_list,
        rates,
        t_tests,
        failures,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_summary(output_dir: &Path) -> Result<Summary> {
    let path = output_dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}
