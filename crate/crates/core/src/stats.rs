//! One-sample t-test on paired differences, and test-set bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{mix_seed, Execution};
use crate::{Error, Result};

pub mod special {
    //! Log-gamma, regularized incomplete beta and the Student-t distribution.

    const LANCZOS_G: f64 = 7.0;
    const LANCZOS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];

    /// ln Γ(x) for x > 0.
    pub fn ln_gamma(x: f64) -> f64 {
        if x < 0.5 {
            // reflection
            let pi = std::f64::consts::PI;
            return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut a = LANCZOS[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    /// Continued fraction for I_x(a, b), modified Lentz.
    fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
        const MAX_ITER: usize = 500;
        const EPS: f64 = 1e-16;
        const TINY: f64 = 1e-300;

        let qab = a + b;
        let qap = a + 1.0;
        let qam = a - 1.0;
        let mut c = 1.0;
        let mut d = 1.0 - qab * x / qap;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..=MAX_ITER {
            let m = m as f64;
            let m2 = 2.0 * m;
            let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
            let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        h
    }

    /// Regularized incomplete beta function I_x(a, b).
    pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let ln_front =
            ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
        let front = ln_front.exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            front * beta_cf(a, b, x) / a
        } else {
            1.0 - front * beta_cf(b, a, 1.0 - x) / b
        }
    }

    /// P(|T| ≥ |t|) for Student's t with `dof` degrees of freedom.
    pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
        if t == 0.0 {
            return 1.0;
        }
        inc_beta(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
    }

    /// Student-t CDF.
    pub fn t_cdf(t: f64, dof: f64) -> f64 {
        let tail = 0.5 * t_two_sided_p(t, dof);
        if t >= 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    /// Quantile of Student's t: the `t` with `t_cdf(t, dof) = q`.
    pub fn t_quantile(q: f64, dof: f64) -> f64 {
        assert!(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
        if q == 0.5 {
            return 0.0;
        }
        if q < 0.5 {
            return -t_quantile(1.0 - q, dof);
        }
        // Bracket then bisect; the CDF is monotone.
        let mut lo = 0.0;
        let mut hi = 1.0;
        while t_cdf(hi, dof) < q {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if t_cdf(mid, dof) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: usize,
}

/// Two-sided one-sample t-test of `diffs` against mean 0, with a confidence
/// interval for the mean at level `confidence`.
pub fn t_test_one_sample(diffs: &[f64], confidence: f64) -> Result<TTestResult> {
    if diffs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-test needs at least 2 samples, got {}",
            diffs.len()
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument("confidence must be in (0, 1)".into()));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("non-finite difference".into()));
    }
    let n = diffs.len();
    let m = mean(diffs);
    let sd = sample_std(diffs);
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let se = sd / (n as f64).sqrt();
    let dof = n - 1;
    let t_stat = m / se;
    let p_value = special::t_two_sided_p(t_stat, dof as f64);
    let t_crit = special::t_quantile(0.5 + confidence / 2.0, dof as f64);
    Ok(TTestResult {
        mean_diff: m,
        ci_low: m - t_crit * se,
        ci_high: m + t_crit * se,
        t_stat,
        p_value,
        dof,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
    /// Resamples discarded because the metric was undefined on them.
    pub redraws: usize,
}

/// Default number of test-set resamples.
pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 50;

/// Per-replicate redraw cap before giving up on the metric.
const MAX_ATTEMPTS_PER_REPLICATE: usize = 100;

/// Bootstraps `metric` over with-replacement resamples of `(score, label)`
/// pairs.
///
/// Replicate `r` draws its indices from a generator seeded with
/// `mix_seed(seed, r)`, so replicates can be computed in any order. A metric
/// returning [`Error::Undefined`] triggers a redraw; any other error aborts.
pub fn bootstrap_metric<S, L, F>(
    scores: &[S],
    labels: &[L],
    metric: F,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<BootstrapResult>
where
    S: Clone + Sync + Send,
    L: Clone + Sync + Send,
    F: Fn(&[S], &[L]) -> Result<f64> + Sync + Send,
{
    if replicates < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 replicates".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Empty("bootstrap dataset"));
    }
    let n = scores.len();

    let one = |r: usize| -> Result<(f64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, r as u64));
        let mut s = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n);
        for attempt in 1..=MAX_ATTEMPTS_PER_REPLICATE {
            s.clear();
            l.clear();
            for _ in 0..n {
                let i = rng.random_range(0..n);
                s.push(scores[i].clone());
                l.push(labels[i].clone());
            }
            match metric(&s, &l) {
                Ok(v) if v.is_finite() => return Ok((v, attempt)),
                Ok(_) | Err(Error::Undefined(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Undefined(format!(
            "metric undefined on {MAX_ATTEMPTS_PER_REPLICATE} consecutive resamples"
        )))
    };

    let results = exec.map_indexed(replicates, one);
    let mut values = Vec::with_capacity(replicates);
    let mut attempts = 0;
    for r in results {
        let (v, a) = r?;
        values.push(v);
        attempts += a;
    }
    let redraws = attempts - replicates;
    if 2 * redraws > attempts {
        return Err(Error::Undefined(format!(
            "metric undefined on {redraws} of {attempts} resamples"
        )));
    }
    Ok(BootstrapResult {
        mean: mean(&values),
        stddev: sample_std(&values),
        replicates: values,
        redraws,
    })
}
