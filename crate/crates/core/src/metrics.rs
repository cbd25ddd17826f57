//! Accuracy by argmax labeling, and the precision-recall curve with its area.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Expands a single sigmoid column into `[1 - p, p]`; wider matrices pass
/// through unchanged.
pub fn class_probabilities(probs: &Matrix) -> Matrix {
    if probs.cols() != 1 {
        return probs.clone();
    }
    let data = probs.as_slice().iter().flat_map(|&p| [1.0 - p, p]).collect();
    Matrix::from_vec(probs.rows(), 2, data).expect("2 columns per row")
}

/// Probability of the positive class: the sigmoid output, or column 1 of a
/// two-class softmax.
pub fn positive_scores(probs: &Matrix) -> Result<Vec<f64>> {
    match probs.cols() {
        1 => Ok(probs.as_slice().to_vec()),
        2 => Ok(probs.iter_rows().map(|r| r[1]).collect()),
        c => Err(Error::Dimension(format!(
            "PR curve needs a binary model, got {c} output columns"
        ))),
    }
}

/// Fraction of rows whose argmax equals the true label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} prediction rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    if probs.cols() < 2 {
        return Err(Error::Dimension("accuracy needs at least 2 class columns".into()));
    }
    let mut correct = 0usize;
    for (row, &y) in probs.iter_rows().zip(labels) {
        if y >= probs.cols() {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                probs.cols()
            )));
        }
        if argmax(row) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Nondecreasing recall, starting with the recall-0 anchor.
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Precision-recall curve over descending score thresholds.
///
/// Equal scores form one threshold group. Each group that has admitted at
/// least one positive yields a point (groups before the first positive sit at
/// recall 0 with no defined precision, and are skipped). The curve is anchored
/// at `(0, precision of the first point)` and integrated by trapezoids.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Undefined(
            "PR curve needs both positive and negative labels".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let total_pos = positives as f64;
    let mut points = Vec::new();
    // Area accumulated in units of positives so a perfect ranking sums to
    // exactly `positives` before the final division.
    let mut area = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev: Option<(usize, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp == 0 {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        match prev {
            None => {
                points.push(PrPoint {
                    recall: 0.0,
                    precision,
                });
                area += tp as f64 * precision;
            }
            Some((prev_tp, prev_prec)) => {
                area += (tp - prev_tp) as f64 * (prev_prec + precision) / 2.0;
            }
        }
        points.push(PrPoint {
            recall: tp as f64 / total_pos,
            precision,
        });
        prev = Some((tp, precision));
    }

    Ok(PrCurve {
        points,
        auc: area / total_pos,
    })
}

/// Trapezoidal area of a stored curve.
pub fn trapezoid_area(points: &[PrPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
        .sum()
}

/// `recall,precision` CSV followed by `# auc=<value>`.
pub fn pr_curve_to_csv(curve: &PrCurve) -> String {
    let mut s = String::from("recall,precision\n");
    for p in &curve.points {
        let _ = writeln!(s, "{},{}", p.recall, p.precision);
    }
    let _ = writeln!(s, "# auc={}", curve.auc);
    s
}

pub fn write_pr_curve(path: &Path, curve: &PrCurve) -> Result<()> {
    fs::write(path, pr_curve_to_csv(curve)).map_err(|e| Error::io(path, e))
}
