//! Learning-rate sweeps: train, build every method, evaluate, summarize.

mod config;
mod report;
mod sweep;

pub use config::{DatasetSpec, EvalMetric, ExperimentConfig, ModelConfig, TrainSection};
pub use report::{render, report};
pub use sweep::{
    evaluate, load_summary, rows_to_csv, run_single, run_sweep, BootstrapCell, CellOutcome,
    Failure, MethodSummary, Prepared, RateSummary, Summary, SweepOutcome, SweepRow, TTestEntry,
    SUMMARY_JSON, SWEEP_CSV, SWEEP_HEADER, T_TEST_CONFIDENCE,
};
