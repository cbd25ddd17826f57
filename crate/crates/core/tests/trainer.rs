use ckens::data::{gen_blobs, split, BlobsConfig, Dataset, SplitSpec};
use ckens::nnet::{Batch, ModelSpec, OutputActivation};
use ckens::trainer::{
    checkpoint_path, load_trace, order_by_score, save_trace, train, validation_score, Direction,
    Snapshot, TrainConfig, TrainingTrace, ValMetric, TRACE_FILE,
};
use ckens::Error;
use proptest::prelude::*;

fn cfg(lr: f64, max_epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: 16,
        max_epochs,
        early_stop_rounds: 5,
        val_metric: ValMetric::Loss,
        shuffle_seed: 11,
    }
}

fn blobs(spread: f64, seed: u64) -> Dataset {
    gen_blobs(&BlobsConfig {
        classes: 2,
        dims: 2,
        per_class: 100,
        spread,
        clusters_per_class: 1,
        seed,
    })
    .unwrap()
}

fn parts(ds: &Dataset, spec: &ModelSpec) -> (Batch, Batch) {
    let (tr, va, _) = split(ds, &SplitSpec::default()).unwrap();
    (tr.to_batch(spec).unwrap(), va.to_batch(spec).unwrap())
}

/// Perceptron with bias; converging to zero mistakes certifies linear
/// separability.
fn perceptron_separates(ds: &Dataset) -> bool {
    let d = ds.dims();
    let mut w = vec![0.0; d + 1];
    for _ in 0..1000 {
        let mut mistakes = 0;
        for (x, &y) in ds.inputs.iter_rows().zip(&ds.labels) {
            let t = if y == 1 { 1.0 } else { -1.0 };
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[d];
            if t * s <= 0.0 {
                mistakes += 1;
                for i in 0..d {
                    w[i] += t * x[i];
                }
                w[d] += t;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

#[test]
fn single_epoch_gives_single_snapshot() {
    let spec = ModelSpec::new(vec![2, 4, 2], OutputActivation::Softmax, 1).unwrap();
    let (tr, va) = parts(&blobs(0.5, 1), &spec);
    let t = train(&spec, &cfg(0.1, 1), &tr, &va, None).unwrap();
    assert_eq!((t.n, t.best_epoch), (1, 1));
}

#[test]
fn improving_scores_run_to_the_cap() {
    // Full-batch descent with a tiny step on val = train decreases the loss every epoch.
    let spec = ModelSpec::new(vec![2, 2], OutputActivation::Softmax, 2).unwrap();
    let (tr, _) = parts(&blobs(0.5, 2), &spec);
    let c = TrainConfig { batch_size: tr.len(), ..cfg(0.01, 20) };
    let t = train(&spec, &c, &tr, &tr, None).unwrap();
    let s = t.val_scores();
    assert!(s.windows(2).all(|w| w[1] < w[0]));
    assert_eq!((t.n, t.best_epoch), (20, 20));
}

#[test]
fn separable_blobs_reach_high_validation_accuracy() {
    let ds = blobs(0.3, 3);
    assert!(perceptron_separates(&ds), "oracle: data must be linearly separable");
    let spec = ModelSpec::new(vec![2, 8, 2], OutputActivation::Softmax, 3).unwrap();
    let (tr, va) = parts(&ds, &spec);
    let c = TrainConfig { early_stop_rounds: 200, ..cfg(0.1, 200) };
    let t = train(&spec, &c, &tr, &va, None).unwrap();
    let last = &t.snapshots.last().unwrap().weights;
    let acc = validation_score(&spec, last, &va, ValMetric::Accuracy).unwrap();
    assert!(acc >= 0.95, "validation accuracy {acc}");
}

#[test]
fn stopping_rule_holds_on_real_runs() {
    for (seed, metric) in [(0, ValMetric::Loss), (1, ValMetric::Accuracy), (2, ValMetric::Loss)] {
        let spec = ModelSpec::new(vec![2, 6, 2], OutputActivation::Softmax, seed).unwrap();
        let (tr, va) = parts(&blobs(1.5, seed), &spec);
        let c = TrainConfig { val_metric: metric, shuffle_seed: seed, ..cfg(0.3, 60) };
        let t = train(&spec, &c, &tr, &va, None).unwrap();
        let a = c.early_stop_rounds;
        assert!(t.n <= c.max_epochs);
        assert!(t.n == c.max_epochs || t.n - t.best_epoch == a, "n={} b={}", t.n, t.best_epoch);
        let best = t.snapshot(t.best_epoch).unwrap().val_score;
        for s in &t.snapshots[t.best_epoch..] {
            assert!(!t.direction.is_better(s.val_score, best));
        }
    }
}

#[test]
fn training_is_reproducible() {
    let spec = ModelSpec::new(vec![2, 5, 2], OutputActivation::Softmax, 9).unwrap();
    let (tr, va) = parts(&blobs(1.0, 9), &spec);
    let a = train(&spec, &cfg(0.2, 30), &tr, &va, None).unwrap();
    let b = train(&spec, &cfg(0.2, 30), &tr, &va, None).unwrap();
    assert_eq!(a, b);
    let other = train(&spec, &TrainConfig { shuffle_seed: 12, ..cfg(0.2, 30) }, &tr, &va, None).unwrap();
    assert_ne!(a.snapshots[0].weights, other.snapshots[0].weights);
}

#[test]
fn run_directory_reloads_to_an_equal_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::new(vec![2, 3, 1], OutputActivation::Sigmoid, 4).unwrap();
    let (tr, va) = parts(&blobs(1.0, 4), &spec);
    let t = train(&spec, &cfg(0.2, 25), &tr, &va, Some(dir.path())).unwrap();
    assert!(dir.path().join(TRACE_FILE).exists());
    assert!(checkpoint_path(dir.path(), t.n).exists());
    assert_eq!(load_trace(dir.path()).unwrap(), t);

    let other = tempfile::tempdir().unwrap();
    save_trace(other.path(), &t).unwrap();
    assert_eq!(load_trace(other.path()).unwrap(), t);
}

#[test]
fn divergence_reports_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::new(vec![2, 16, 16, 2], OutputActivation::Softmax, 5).unwrap();
    let (tr, va) = parts(&blobs(1.0, 5), &spec);
    let err = train(&spec, &cfg(1e200, 50), &tr, &va, Some(dir.path())).unwrap_err();
    match err {
        Error::NonFinite { epoch, partial } => {
            assert_eq!(partial.n, epoch - 1);
            assert_eq!(load_trace(dir.path()).unwrap().n, partial.n);
        }
        e => panic!("expected NonFinite, got {e}"),
    }
}

fn trace_from(scores: Vec<f64>, direction: Direction) -> TrainingTrace {
    let spec = ModelSpec::new(vec![1, 1], OutputActivation::Sigmoid, 0).unwrap();
    let snaps = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| Snapshot { epoch: i + 1, weights: vec![i as f64, 0.0].into(), val_score: s })
        .collect();
    TrainingTrace::new(spec, snaps, direction, 3).unwrap()
}

proptest! {
    #[test]
    fn ordering_is_a_permutation_led_by_the_best_epoch(
        scores in prop::collection::vec((0u8..6).prop_map(f64::from), 1..25),
        higher in any::<bool>(),
    ) {
        let dir = if higher { Direction::HigherBetter } else { Direction::LowerBetter };
        let t = trace_from(scores, dir);
        let order = order_by_score(&t).unwrap();
        let mut epochs: Vec<usize> = order.iter().map(|s| s.epoch).collect();
        prop_assert_eq!(epochs[0], t.best_epoch);
        for w in order.windows(2) {
            let strictly = dir.is_better(w[1].val_score, w[0].val_score);
            prop_assert!(!strictly);
            if w[0].val_score == w[1].val_score {
                prop_assert!(w[0].epoch < w[1].epoch);
            }
        }
        epochs.sort();
        prop_assert_eq!(epochs, (1..=t.n).collect::<Vec<_>>());
    }
}
