//! Yeo-Johnson power transform and boxplot summaries.

use serde::{Deserialize, Serialize};

use crate::attribution::{quantile_sorted, SensitivitySet};
use crate::error::{Error, Result};
use crate::perturb::PerturbKind;

/// Lambda grid searched by [`fit_lambda`]: `-2.00, -1.99, ..., 2.00`.
pub const LAMBDA_GRID: (i32, i32) = (-200, 200);

/// Yeo-Johnson transform of `x`. Written with `ln_1p`/`exp_m1` so it stays
/// accurate near the `lambda = 0` and `lambda = 2` branches.
pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return x;
    }
    if x >= 0.0 {
        let l = x.ln_1p();
        if lambda == 0.0 {
            l
        } else {
            (lambda * l).exp_m1() / lambda
        }
    } else {
        let l = (-x).ln_1p();
        let m = 2.0 - lambda;
        if m == 0.0 {
            -l
        } else {
            -(m * l).exp_m1() / m
        }
    }
}

/// Inverse of [`yeo_johnson`] for the same `lambda`. Values outside the
/// transform's image give NaN.
pub fn yeo_johnson_inverse(y: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return y;
    }
    if y >= 0.0 {
        if lambda == 0.0 {
            y.exp_m1()
        } else {
            ((lambda * y).ln_1p() / lambda).exp_m1()
        }
    } else {
        let m = 2.0 - lambda;
        if m == 0.0 {
            -(-y).exp_m1()
        } else {
            -((-m * y).ln_1p() / m).exp_m1()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    /// Zero variance: every lambda fits equally, 1 (the identity) is used.
    pub degenerate: bool,
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Profile Gaussian log-likelihood of the transformed sample, up to a
/// constant: `-n/2 ln(var) + (lambda - 1) sum sign(x) ln(1 + |x|)`.
pub fn log_likelihood(values: &[f64], lambda: f64) -> f64 {
    let t: Vec<f64> = values.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let jacobian: f64 = values.iter().map(|x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * values.len() as f64 * variance(&t).ln() + (lambda - 1.0) * jacobian
}

/// Maximum-likelihood lambda over the fixed grid; the first maximum wins.
pub fn fit_lambda(values: &[f64]) -> Result<LambdaFit> {
    if values.is_empty() {
        return Err(Error::Empty("values to fit"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("value to fit".into()));
    }
    if variance(values) == 0.0 {
        return Ok(LambdaFit {
            lambda: 1.0,
            degenerate: true,
        });
    }
    let mut best = (f64::NEG_INFINITY, 1.0);
    for i in LAMBDA_GRID.0..=LAMBDA_GRID.1 {
        let lambda = f64::from(i) / 100.0;
        let ll = log_likelihood(values, lambda);
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    Ok(LambdaFit {
        lambda: best.1,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub n: usize,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub mean: f64,
    /// Smallest datum at or above `q1 - 1.5 IQR`.
    pub whisker_low: f64,
    /// Largest datum at or below `q3 + 1.5 IQR`.
    pub whisker_high: f64,
    /// Every datum beyond the whiskers, ascending.
    pub outliers: Vec<f64>,
}

pub fn boxplot_summary(values: &[f64]) -> Result<BoxplotSummary> {
    if values.is_empty() {
        return Err(Error::Empty("boxplot values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("boxplot value".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = |v: &&f64| **v >= lo_fence && **v <= hi_fence;
    let whisker_low = *s.iter().find(inside).unwrap_or(&s[0]);
    let whisker_high = *s.iter().rev().find(inside).unwrap_or(&s[s.len() - 1]);
    Ok(BoxplotSummary {
        n: s.len(),
        q1,
        q2: quantile_sorted(&s, 0.5),
        q3,
        mean: s.iter().sum::<f64>() / s.len() as f64,
        whisker_low,
        whisker_high,
        outliers: s.iter().copied().filter(|v| !inside(&v)).collect(),
    })
}

/// Scores of one sensitivity set after a per-set fitted transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedSet {
    pub feature: String,
    pub kind: PerturbKind,
    pub epsilon: Option<f64>,
    pub fit: LambdaFit,
    pub values: Vec<f64>,
}

impl TransformedSet {
    pub fn from_set(set: &SensitivitySet) -> Result<Self> {
        let fit = fit_lambda(&set.scores)?;
        Ok(Self {
            feature: set.feature.clone(),
            kind: set.kind,
            epsilon: set.epsilon,
            fit,
            values: set.scores.iter().map(|&x| yeo_johnson(x, fit.lambda)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_one() {
        for x in [-3.5, -1.0, 0.0, 0.25, 7.0, 1e6] {
            assert_eq!(yeo_johnson(x, 1.0), x);
        }
    }

    #[test]
    fn log_branch() {
        let x = std::f64::consts::E - 1.0;
        assert!((yeo_johnson(x, 0.0) - 1.0).abs() < 1e-15);
        assert!((yeo_johnson(-x, 2.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_is_fixed() {
        for l in [-2.0, -0.5, 0.0, 0.7, 2.0] {
            assert_eq!(yeo_johnson(0.0, l), 0.0);
            assert_eq!(yeo_johnson_inverse(0.0, l), 0.0);
        }
    }

    #[test]
    fn known_values() {
        // ((x + 1)^2 - 1) / 2 at x = 3; -((1 - x)^1.5 - 1) / 1.5 at x = -3.
        assert!((yeo_johnson(3.0, 2.0) - 7.5).abs() < 1e-12);
        assert!((yeo_johnson(-3.0, 0.5) + 7.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_degenerate() {
        let f = fit_lambda(&[4.0; 10]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.lambda, 1.0);
        assert!(fit_lambda(&[]).is_err());
    }

    #[test]
    fn boxplot_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let b = boxplot_summary(&v).unwrap();
        assert_eq!(b.q2, 50.5);
        assert!(b.outliers.is_empty());
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 100.0));

        let b = boxplot_summary(&[1.0, 2.0, 3.0, 4.0, 1000.0]).unwrap();
        assert_eq!((b.q1, b.q2, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.outliers, vec![1000.0]);
        assert_eq!(b.whisker_high, 4.0);

        let b = boxplot_summary(&[7.0]).unwrap();
        assert_eq!(
            (b.q1, b.q2, b.q3, b.whisker_low, b.whisker_high),
            (7.0, 7.0, 7.0, 7.0, 7.0)
        );
        assert!(boxplot_summary(&[]).is_err());
    }
}
