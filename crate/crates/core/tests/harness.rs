use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ckens::ensemble::{load_predictor, predict, Method};
use ckens::harness::{
    evaluate, render, report, DatasetSpec, ModelConfig, run_single, run_sweep, EvalMetric, ExperimentConfig, MethodSummary,
    RateSummary, Summary, SUMMARY_JSON, SWEEP_CSV,
};
use ckens::nnet::OutputActivation;
use ckens::{Error, Execution};

fn config(out: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{"dataset": {{"kind": "blobs", "classes": 3, "dims": 4, "per_class": 40, "spread": 1.2, "seed": 3}},
            "model": {{"hidden": [8]}},
            "train": {{"batch_size": 16, "max_epochs": 25, "early_stop_rounds": 4}},
            "sweep": [0.3, 0.1, 0.03],
            "seeds_per_rate": 3,
            "output_dir": {out:?}
            {extra}}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

#[derive(Debug)]
struct Row {
    rate: f64,
    seed: Option<usize>,
    method: String,
    metric: String,
    value: f64,
    best_epoch: usize,
    total_epochs: usize,
    k_used: usize,
}

fn read_rows(dir: &Path) -> Vec<Row> {
    let mut r = csv::Reader::from_path(dir.join(SWEEP_CSV)).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            Row {
                rate: rec[0].parse().unwrap(),
                seed: (!rec[1].is_empty()).then(|| rec[1].parse().unwrap()),
                method: rec[2].to_string(),
                metric: rec[3].to_string(),
                value: rec[4].parse().unwrap(),
                best_epoch: rec[5].parse().unwrap(),
                total_epochs: rec[6].parse().unwrap(),
                k_used: rec[7].parse().unwrap(),
            }
        })
        .collect()
}

#[test]
fn single_run_rows_are_paired() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#", "methods": ["CE", "MV", "CS", "LKS"], "eval_metrics": ["accuracy"]"#);
    let (run_dir, rows) = run_single(&cfg, None, Execution::Parallel).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.best_epoch == rows[0].best_epoch && r.total_epochs == rows[0].total_epochs));
    assert!(rows.iter().all(|r| r.value.is_finite()));
    for r in &rows {
        match r.method {
            Method::Mv => assert_eq!(r.k_used, 1),
            Method::Ce | Method::Cs => assert!((1..=r.total_epochs).contains(&r.k_used)),
            _ => {}
        }
    }
    assert!(run_dir.join("trace.json").exists());
    assert!(run_dir.join("predictors/CE/predictor.json").exists());
}

#[test]
fn one_epoch_makes_every_method_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "");
    cfg.train.max_epochs = 1;
    let (_, rows) = run_single(&cfg, None, Execution::Sequential).unwrap();
    assert!(rows.iter().all(|r| r.value == rows[0].value));
}

#[test]
fn sweep_output_layout_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#", "eval_metrics": ["accuracy"], "rie_runs": 2"#);
    let outcome = run_sweep(&cfg, None, Execution::Parallel).unwrap();
    let rows = read_rows(dir.path());
    assert_eq!(rows.len(), 3 * 3 * 4 + 3);
    assert_eq!(rows.len(), outcome.rows.len());

    // Sorted by rate, then seed, with RIE last in each rate.
    let rates: Vec<f64> = rows.iter().map(|r| r.rate).collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]));
    assert!(rows.iter().all(|r| r.metric == "accuracy"));
    for r in rows.iter().filter(|r| r.method == "RIE") {
        assert_eq!(r.seed, None);
        assert_eq!(r.k_used, 2);
        let members: Vec<&Row> = rows
            .iter()
            .filter(|m| m.rate == r.rate && m.method == "MV" && m.seed.is_some_and(|s| s < 2))
            .collect();
        assert_eq!(r.best_epoch, members.iter().map(|m| m.best_epoch).sum::<usize>());
        assert_eq!(r.total_epochs, members.iter().map(|m| m.total_epochs).sum::<usize>());
    }
    let mut cells: BTreeMap<(String, usize), Vec<&Row>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.seed.is_some()) {
        cells.entry((r.rate.to_string(), r.seed.unwrap())).or_default().push(r);
    }
    for group in cells.values() {
        assert_eq!(group.len(), 4);
        assert!(group.iter().all(|r| r.best_epoch == group[0].best_epoch && r.total_epochs == group[0].total_epochs));
    }
    assert!(dir.path().join("rie/lr0/predictor.json").exists());
    assert!(dir.path().join(SUMMARY_JSON).exists());
}

#[test]
fn summary_gain_equals_hand_average_of_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), r#", "keep_checkpoints": false"#);
    cfg.seeds_per_rate = 5;
    let outcome = run_sweep(&cfg, None, Execution::Parallel).unwrap();
    let rows = read_rows(dir.path());
    let value = |rate: f64, seed: usize, m: &str| {
        rows.iter()
            .find(|r| r.rate == rate && r.seed == Some(seed) && r.method == m)
            .unwrap()
            .value
    };
    let mut pooled = Vec::new();
    for rs in &outcome.summary.rates {
        let diffs: Vec<f64> = (0..5).map(|s| value(rs.learning_rate, s, "CE") - value(rs.learning_rate, s, "MV")).collect();
        pooled.extend(&diffs);
        let hand = diffs.iter().sum::<f64>() / 5.0;
        assert!((rs.gain[&EvalMetric::Accuracy] - hand).abs() < 1e-12);
        let mv_mean = (0..5).map(|s| value(rs.learning_rate, s, "MV")).sum::<f64>() / 5.0;
        assert!((rs.methods[&Method::Mv].mean[&EvalMetric::Accuracy] - mv_mean).abs() < 1e-12);
    }
    let ce = outcome
        .summary
        .t_tests
        .iter()
        .find(|t| t.method == Method::Ce)
        .unwrap();
    assert_eq!(ce.samples, 15);
    if let Some(r) = ce.result {
        assert!((r.mean_diff - pooled.iter().sum::<f64>() / 15.0).abs() < 1e-12);
    }
    let mv = outcome.summary.t_tests.iter().find(|t| t.method == Method::Mv).unwrap();
    assert!(mv.result.is_none());
    assert!(mv.error.as_ref().unwrap().contains("zero variance"));
}

#[test]
fn mv_only_sweep_has_one_row_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), r#", "methods": ["MV"], "keep_checkpoints": false"#);
    cfg.seeds_per_rate = 1;
    run_sweep(&cfg, None, Execution::Sequential).unwrap();
    assert_eq!(read_rows(dir.path()).len(), cfg.sweep.len());
}

#[test]
fn sweep_is_deterministic_across_execution_modes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = r#", "eval_metrics": ["accuracy"], "bootstrap_replicates": 10"#;
    run_sweep(&config(a.path(), extra), None, Execution::Parallel).unwrap();
    run_sweep(&config(b.path(), extra), None, Execution::Sequential).unwrap();
    for f in [SWEEP_CSV, SUMMARY_JSON] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let text = report(a.path()).unwrap();
    assert_eq!(text, report(a.path()).unwrap());
    assert!(text.contains("sigma MV"));
}

#[test]
fn saved_predictors_reproduce_sweep_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), r#", "eval_metrics": ["accuracy", "pr_auc"]"#);
    cfg.dataset = DatasetSpec::Imbalanced { n: 400, positive_frac: 0.2, hardness: 0.3, seed: 1 };
    cfg.model = ModelConfig { hidden: vec![6], output: Some(OutputActivation::Sigmoid) };
    let prep = ckens::harness::Prepared::new(&cfg, None).unwrap();
    let outcome = run_sweep(&cfg, None, Execution::Parallel).unwrap();
    for row in outcome.rows.iter().filter(|r| r.seed == Some(1) && r.learning_rate == 0.1) {
        let p = load_predictor(&dir.path().join(format!("runs/lr1_seed1/predictors/{}", row.method))).unwrap();
        let probs = predict(&p, &prep.test.inputs, Execution::Sequential).unwrap();
        assert_eq!(evaluate(row.metric, &probs, &prep.test.labels).unwrap(), row.value);
    }
    assert!(dir.path().join("runs/lr1_seed1/pr_CE.csv").exists());
}

fn one_rate_summary(mv: f64, ce: f64) -> Summary {
    let ms = |v: f64, diff: f64| MethodSummary {
        mean: BTreeMap::from([(EvalMetric::Accuracy, v)]),
        diff_vs_mv: BTreeMap::from([(EvalMetric::Accuracy, diff)]),
        convergence_epochs: 3.0,
        ..MethodSummary::default()
    };
    Summary {
        methods: vec![Method::Mv, Method::Ce],
        metrics: vec![EvalMetric::Accuracy],
        rates: vec![RateSummary {
            learning_rate: 0.1,
            runs: 1,
            mean_best_epoch: 3.0,
            methods: BTreeMap::from([(Method::Mv, ms(mv, 0.0)), (Method::Ce, ms(ce, ce - mv))]),
            gain: BTreeMap::from([(EvalMetric::Accuracy, ce - mv)]),
        }],
        t_tests: vec![],
        failures: vec![],
    }
}

#[test]
fn report_shows_gain_row() {
    let text = render(&one_rate_summary(0.5, 0.6)).unwrap();
    let gain = text.lines().find(|l| l.starts_with("Gain (CE-MV)")).unwrap();
    assert_eq!(gain.split_whitespace().last(), Some("0.1000"));
    assert!(text.lines().any(|l| l.starts_with("Epoch") && l.ends_with("3.0")));
}

#[test]
fn report_without_methods_fails() {
    let mut s = one_rate_summary(0.5, 0.6);
    s.methods = vec![Method::Rie];
    assert!(matches!(render(&s), Err(Error::NothingToReport(_))));
    let dir = tempfile::tempdir().unwrap();
    assert!(report(dir.path()).is_err());
    fs::write(dir.path().join(SUMMARY_JSON), "{ not json").unwrap();
    assert!(matches!(report(dir.path()), Err(Error::Json { .. })));
}
