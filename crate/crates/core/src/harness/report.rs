use std::fmt::Write as _;
use std::path::Path;

use super::config::EvalMetric;
use super::sweep::{load_summary, Summary};
use crate::ensemble::Method;
use crate::{Error, Result};

const LABEL_WIDTH: usize = 18;
const COL_WIDTH: usize = 11;

/// Loads `summary.json` from `output_dir` and renders it.
pub fn report(output_dir: &Path) -> Result<String> {
    render(&load_summary(output_dir)?)
}

fn row(out: &mut String, label: &str, cells: impl IntoIterator<Item = Option<String>>) {
    let _ = write!(out, "{label:<LABEL_WIDTH$}");
    for c in cells {
        let c = c.unwrap_or_else(|| "-".into());
        let _ = write!(out, "{c:>COL_WIDTH$}");
    }
    out.push('\n');
}

/// Plain-text tables: one per metric with rates as columns, then the
/// paired t-tests. Output depends only on the summary.
pub fn render(summary: &Summary) -> Result<String> {
    let present: Vec<Method> = summary
        .methods
        .iter()
        .copied()
        .filter(|m| summary.rates.iter().any(|r| r.methods.contains_key(m)))
        .collect();
    if present.is_empty() {
        return Err(Error::NothingToReport(
            "summary has no evaluated methods".into(),
        ));
    }
    let rates = &summary.rates;
    let fmt4 = |v: Option<f64>| v.map(|v| format!("{v:.4}"));
    let fmt1 = |v: Option<f64>| v.map(|v| format!("{v:.1}"));

    let mut out = String::new();
    for &metric in &summary.metrics {
        let _ = writeln!(out, "== {} ==", metric.as_str());
        row(&mut out, "learning rate", rates.iter().map(|r| Some(r.learning_rate.to_string())));
        for &m in &present {
            row(
                &mut out,
                m.as_str(),
                rates.iter().map(|r| fmt4(r.methods.get(&m)?.mean.get(&metric).copied())),
            );
        }
        if rates.iter().any(|r| r.gain.contains_key(&metric)) {
            row(&mut out, "Gain (CE-MV)", rates.iter().map(|r| fmt4(r.gain.get(&metric).copied())));
        }
        row(&mut out, "Epoch", rates.iter().map(|r| fmt1((r.runs > 0).then_some(r.mean_best_epoch))));
        let has_sigma = |m: &Method| {
            rates
                .iter()
                .any(|r| r.methods.get(m).is_some_and(|s| s.bootstrap_std.contains_key(&metric)))
        };
        for m in present.iter().filter(|m| has_sigma(m)) {
            row(
                &mut out,
                &format!("sigma {m}"),
                rates.iter().map(|r| fmt4(r.methods.get(m)?.bootstrap_std.get(&metric).copied())),
            );
        }
        if rates.iter().any(|r| {
            r.methods
                .get(&Method::Ce)
                .is_some_and(|s| s.gain_bootstrap_std.contains_key(&metric))
        }) {
            row(
                &mut out,
                "Gain sigma",
                rates.iter().map(|r| {
                    fmt4(r.methods.get(&Method::Ce)?.gain_bootstrap_std.get(&metric).copied())
                }),
            );
        }
        out.push('\n');
    }

    out.push_str("== epochs to convergence ==\n");
    row(&mut out, "learning rate", rates.iter().map(|r| Some(r.learning_rate.to_string())));
    for &m in &present {
        row(
            &mut out,
            m.as_str(),
            rates.iter().map(|r| fmt1(r.methods.get(&m).map(|s| s.convergence_epochs))),
        );
    }

    if !summary.t_tests.is_empty() {
        out.push_str("\n== paired t-tests vs MV ==\n");
        for t in &summary.t_tests {
            let _ = write!(out, "{:<5}{:<10} n={:<4}", t.method.as_str(), metric_name(t.metric), t.samples);
            match (&t.result, &t.error) {
                (Some(r), _) => {
                    let _ = writeln!(
                        out,
                        " mean={:+.5} CI=[{:+.5}, {:+.5}] t={:.3} p={:.4}",
                        r.mean_diff, r.ci_low, r.ci_high, r.t_stat, r.p_value
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(out, " {e}");
                }
                (None, None) => out.push('\n'),
            }
        }
    }

    if !summary.failures.is_empty() {
        out.push_str("\n== failed runs ==\n");
        for f in &summary.failures {
            let _ = writeln!(out, "lr={} seed={}: {}", f.learning_rate, f.seed, f.error);
        }
    }
    Ok(out)
}

fn metric_name(m: EvalMetric) -> &'static str {
    m.as_str()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_summary_is_an_error() {
        let s = Summary {
            methods: vec![Method::Mv],
            metrics: vec![EvalMetric::Accuracy],
            rates: vec![],
            t_tests: vec![],
            failures: vec![],
        };
        assert!(matches!(render(&s), Err(Error::NothingToReport(_))));
    }
}
