//! Moment estimators with jackknife standard errors.
//!
//! Replicas are i.i.d. by construction, so every standard error is a
//! leave-one-out jackknife over replicas. The leave-one-out values are
//! produced in `O(1)` each from grand-mean-centered power sums, and all
//! reductions use Neumaier compensated summation so that merging ensembles
//! reproduces a single pass to near machine precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    SampleSize { need: usize, got: usize },
    #[error("paired series have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Neumaier (improved Kahan) compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Compensated sum of a slice.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Mean, variance, and standardized third/fourth moments of one observable,
/// each with a jackknife standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: f64,
    pub se_mean: f64,
    /// Unbiased sample variance (divisor `n − 1`).
    pub variance: f64,
    pub se_variance: f64,
    /// Plug-in skewness `m₃/m₂^{3/2}`; `0` for a degenerate sample.
    pub skewness: f64,
    pub se_skewness: f64,
    /// Plug-in excess kurtosis `m₄/m₂² − 3`; `0` for a degenerate sample.
    pub excess_kurtosis: f64,
    pub se_kurtosis: f64,
}

/// Sample covariance of a pair of observables with a jackknife standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub n: usize,
    /// Unbiased sample covariance (divisor `n − 1`).
    pub covariance: f64,
    pub se: f64,
}

/// Jackknife standard error from a slice of leave-one-out estimates.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let n = leave_one_out.len();
    let mean = compensated_sum(leave_one_out) / n as f64;
    let mut dev = CompensatedSum::default();
    for &theta in leave_one_out {
        let d = theta - mean;
        dev.add(d * d);
    }
    ((n as f64 - 1.0) / n as f64 * dev.value()).sqrt()
}

/// Grand-mean-centered residuals and their compensated power sums `Σcᵏ`.
fn centered_powers(xs: &[f64]) -> (f64, Vec<f64>, [f64; 4]) {
    let n = xs.len() as f64;
    let mean = compensated_sum(xs) / n;
    let centered: Vec<f64> = xs.iter().map(|&x| x - mean).collect();
    let mut sums = [CompensatedSum::default(); 4];
    for &c in &centered {
        let c2 = c * c;
        sums[0].add(c);
        sums[1].add(c2);
        sums[2].add(c2 * c);
        sums[3].add(c2 * c2);
    }
    (
        mean,
        centered,
        [
            sums[0].value(),
            sums[1].value(),
            sums[2].value(),
            sums[3].value(),
        ],
    )
}

fn skew_from_sums(s2: f64, s3: f64, m: f64) -> f64 {
    if s2 <= 0.0 {
        return 0.0;
    }
    let m2 = s2 / m;
    (s3 / m) / (m2 * m2.sqrt())
}

fn kurt_from_sums(s2: f64, s4: f64, m: f64) -> f64 {
    if s2 <= 0.0 {
        return 0.0;
    }
    let m2 = s2 / m;
    (s4 / m) / (m2 * m2) - 3.0
}

/// Full moment summary of one sample.
///
/// Requires at least 4 samples so that the leave-one-out fourth moment is
/// defined; the harness imposes its own stricter minimum.
pub fn moment_summary(xs: &[f64]) -> Result<MomentSummary, StatsError> {
    let n = xs.len();
    if n < 4 {
        return Err(StatsError::SampleSize { need: 4, got: n });
    }
    let nf = n as f64;
    let (mean, centered, [_, p2, p3, p4]) = centered_powers(xs);

    let variance = p2 / (nf - 1.0);
    let se_mean = (variance / nf).max(0.0).sqrt();
    let skewness = skew_from_sums(p2, p3, nf);
    let excess_kurtosis = kurt_from_sums(p2, p4, nf);

    // Leave-one-out sums via the shift δ = c/(n−1) of the remaining mean:
    //   Σ_{j≠i}(c_j+δ)ᵏ expanded binomially with Σ_{j≠i}c_j = −c.
    let mut loo_var = Vec::with_capacity(n);
    let mut loo_skew = Vec::with_capacity(n);
    let mut loo_kurt = Vec::with_capacity(n);
    let m = nf - 1.0;
    for &c in &centered {
        let d = c / m;
        let c2 = c * c;
        let s2 = (p2 - c2) - c2 / m;
        let s3 = (p3 - c2 * c) + 3.0 * d * (p2 - c2) - 3.0 * d * d * c + m * d * d * d;
        let s4 = (p4 - c2 * c2) + 4.0 * d * (p3 - c2 * c) + 6.0 * d * d * (p2 - c2)
            - 4.0 * d * d * d * c
            + m * d * d * d * d;
        let s2 = s2.max(0.0);
        loo_var.push(s2 / (m - 1.0));
        loo_skew.push(skew_from_sums(s2, s3, m));
        loo_kurt.push(kurt_from_sums(s2, s4, m));
    }

    Ok(MomentSummary {
        n,
        mean,
        se_mean,
        variance,
        se_variance: jackknife_se(&loo_var),
        skewness,
        se_skewness: jackknife_se(&loo_skew),
        excess_kurtosis,
        se_kurtosis: jackknife_se(&loo_kurt),
    })
}

/// Sample covariance with a jackknife standard error.
pub fn covariance_estimate(a: &[f64], b: &[f64]) -> Result<CovEstimate, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 4 {
        return Err(StatsError::SampleSize { need: 4, got: n });
    }
    let nf = n as f64;
    let m = nf - 1.0;
    let (_, ca, _) = centered_powers(a);
    let (_, cb, _) = centered_powers(b);
    let mut cross = CompensatedSum::default();
    for (&x, &y) in ca.iter().zip(&cb) {
        cross.add(x * y);
    }
    let pab = cross.value();
    let covariance = pab / m;

    // Leave-one-out cross sum: Σ_{j≠i}(c_j+δ_a)(d_j+δ_b) = pab − cd·n/(n−1).
    let mut loo = Vec::with_capacity(n);
    for (&c, &d) in ca.iter().zip(&cb) {
        let sab = pab - c * d - c * d / m;
        loo.push(sab / (m - 1.0));
    }
    Ok(CovEstimate {
        n,
        covariance,
        se: jackknife_se(&loo),
    })
}
