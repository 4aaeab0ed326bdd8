//! Maximum-likelihood estimators of the nested covariance hierarchy.
//!
//! All estimators treat the mean as known and zero, and normalize by `N`.

mod decay;
mod gmrf;

pub use decay::{decay_loglik, decay_score2, decay_score3, fit_decay2, fit_decay3};
pub use gmrf::{fit_gmrf, gmrf_hessian, gmrf_loglik, gmrf_score};

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{DiagonalCovariance, SampleSet};

/// Per-coordinate sums of squares `S_j^2`, sufficient for diagonal models.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    s2: Vec<f64>,
    n_samples: usize,
}

impl SufficientStats {
    pub fn new(s2: Vec<f64>, n_samples: usize) -> Result<Self> {
        if s2.is_empty() {
            return Err(Error::EmptyInput);
        }
        if n_samples == 0 {
            return Err(Error::SampleTooSmall {
                required: 1,
                actual: 0,
            });
        }
        if s2.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(
                "sums of squares must be finite and non-negative".into(),
            ));
        }
        Ok(Self { s2, n_samples })
    }

    /// Population-exact statistics `S_j^2 = N d_j`.
    pub fn noiseless(d: &DiagonalCovariance, n_samples: usize) -> Result<Self> {
        Self::new(
            d.variances().iter().map(|v| v * n_samples as f64).collect(),
            n_samples,
        )
    }

    pub fn sums_of_squares(&self) -> &[f64] {
        &self.s2
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.s2.len()
    }

    /// `S_j^2 / N`.
    pub fn mean_squares(&self) -> Vec<f64> {
        let n = self.n_samples as f64;
        self.s2.iter().map(|v| v / n).collect()
    }
}

/// Outcome of an iterative fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the estimating-equation residuals at `params`.
    pub residual_norm: f64,
    pub converged: bool,
}

/// `(1/N) sum_i x_i x_i^T`.
///
/// Singular whenever `N < n`; no definiteness certificate is attempted.
pub fn sample_covariance(s: &SampleSet) -> DMatrix<f64> {
    let x = s.data();
    let (n, big_n) = (s.dim(), s.size());
    let inv = 1.0 / big_n as f64;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..big_n {
                acc += x[(i, k)] * x[(j, k)];
            }
            let v = acc * inv;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `(1/(N-1)) sum_i x_i x_i^T`.
pub fn unbiased_sample_covariance(s: &SampleSet) -> Result<DMatrix<f64>> {
    let big_n = s.size();
    if big_n < 2 {
        return Err(Error::SampleTooSmall {
            required: 2,
            actual: big_n,
        });
    }
    Ok(sample_covariance(s) * (big_n as f64 / (big_n as f64 - 1.0)))
}

pub fn sufficient_stats(s: &SampleSet) -> SufficientStats {
    let x = s.data();
    let s2 = (0..s.dim())
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..s.size() {
                acc += x[(i, k)] * x[(i, k)];
            }
            acc
        })
        .collect();
    SufficientStats {
        s2,
        n_samples: s.size(),
    }
}

/// Unrestricted diagonal MLE `d_j = S_j^2 / N`.
pub fn diagonal_mle(stats: &SufficientStats) -> Result<DiagonalCovariance> {
    if let Some(index) = stats.s2.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroVariance { index });
    }
    let inv = 1.0 / stats.n_samples as f64;
    DiagonalCovariance::new(stats.s2.iter().map(|v| v * inv).collect())
}

/// Gaussian log-likelihood of a diagonal covariance given sums of squares:
/// `-(N/2) n log(2 pi) + (N/2) sum log tau_i - (1/2) sum tau_i S_i^2`.
pub fn loglik_diagonal(d: &DiagonalCovariance, stats: &SufficientStats) -> Result<f64> {
    if d.len() != stats.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} variances", stats.dim()),
            actual: format!("{}", d.len()),
        });
    }
    let big_n = stats.n_samples as f64;
    let n = d.len() as f64;
    let (log_tau, quad) = d
        .precisions()
        .iter()
        .zip(&stats.s2)
        .fold((0.0, 0.0), |(lt, q), (t, s)| (lt + t.ln(), q + t * s));
    Ok(-0.5 * big_n * n * (2.0 * PI).ln() + 0.5 * big_n * log_tau - 0.5 * quad)
}
