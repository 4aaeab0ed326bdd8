//! Regularized covariance baselines: Ledoit–Wolf shrinkage toward a scaled
//! identity, and the condition-number-constrained MLE with its bound chosen
//! by K-fold cross-validation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::sample_covariance;
use crate::model::{SampleSet, SpdMatrix};

/// Default number of cross-validation folds.
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone)]
pub struct ShrinkageResult {
    /// `gamma * S + (1 - gamma) * target_scale * I`.
    pub estimate: SpdMatrix,
    pub gamma: f64,
    pub target_scale: f64,
}

#[derive(Debug, Clone)]
pub struct CondRegResult {
    pub estimate: SpdMatrix,
    /// Selected bound on the condition number.
    pub kappa: f64,
    /// Lower eigenvalue truncation level of the final fit.
    pub tau: f64,
    /// `(kappa, mean held-out log-likelihood)` in grid order.
    pub cv_scores: Vec<(f64, f64)>,
}

/// Ledoit–Wolf shrinkage of the sample covariance toward `mu I`, `mu = Tr(S)/n`.
pub fn ledoit_wolf(s: &SampleSet) -> Result<ShrinkageResult> {
    let (n, big_n) = (s.dim(), s.size());
    if big_n < 2 {
        return Err(Error::SampleTooSmall { required: 2, actual: big_n });
    }
    let x = s.data();
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSample);
    }
    let cov = sample_covariance(s);
    let nf = n as f64;
    let mu = cov.trace() / nf;
    let mut dev = cov.clone();
    for i in 0..n {
        dev[(i, i)] -= mu;
    }
    let d2 = dev.norm_squared() / nf;
    // |x x^T - S|_F^2 = |x|^4 - 2 x^T S x + |S|_F^2
    let cov_norm2 = cov.norm_squared();
    let sx = &cov * x;
    let spread: f64 = (0..big_n)
        .map(|k| {
            let col = x.column(k);
            let len2 = col.norm_squared();
            len2 * len2 - 2.0 * col.dot(&sx.column(k)) + cov_norm2
        })
        .sum();
    let beta2 = (spread / ((big_n * big_n) as f64 * nf)).max(0.0);
    let b2 = beta2.min(d2);
    let gamma = if d2 > 0.0 { 1.0 - b2 / d2 } else { 0.0 };
    let mut est = cov * gamma;
    for i in 0..n {
        est[(i, i)] += (1.0 - gamma) * mu;
    }
    Ok(ShrinkageResult {
        estimate: SpdMatrix::try_certified(est)?,
        gamma,
        target_scale: mu,
    })
}

/// Derivative of the clipped log-likelihood in `tau`, times `tau^2`.
/// Piecewise linear and non-increasing.
fn clip_slope(eigs: &[f64], kappa: f64, tau: f64) -> f64 {
    eigs.iter()
        .map(|&l| {
            if l < tau {
                l - tau
            } else if l > kappa * tau {
                l / kappa - tau
            } else {
                0.0
            }
        })
        .sum()
}

/// Condition-number-constrained MLE on a spectrum: returns `tau` and the
/// eigenvalues clipped to `[tau, kappa tau]`.
///
/// The restricted log-likelihood `sum -log m_i - l_i/m_i` is unimodal in
/// `tau` with a piecewise-linear derivative (after scaling by `tau^2`), so
/// the maximizer is found exactly by locating the sign change among the
/// breakpoints `l_i` and `l_i / kappa`.
pub fn cond_reg_solve(sample_eigs: &[f64], kappa: f64) -> Result<(f64, Vec<f64>)> {
    if !(kappa >= 1.0) {
        return Err(Error::InvalidInput(format!("kappa must be at least 1, got {kappa}")));
    }
    if sample_eigs.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidInput("eigenvalues must be finite and non-negative".into()));
    }
    let l_max = sample_eigs.iter().copied().fold(0.0, f64::max);
    let l_min = sample_eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(l_max > 0.0) {
        return Err(Error::InvalidInput("need at least one positive eigenvalue".into()));
    }
    if l_max <= kappa * l_min {
        return Ok((l_min, sample_eigs.to_vec()));
    }
    let upper = l_max / kappa;
    let mut knots: Vec<f64> = sample_eigs
        .iter()
        .flat_map(|&l| [l, l / kappa])
        .filter(|&t| t > 0.0 && t < upper)
        .collect();
    knots.push(upper);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    // slope at tau -> 0+ is sum(l)/kappa > 0; at `upper` it is <= 0
    let (mut lo, mut g_lo) = (0.0, sample_eigs.iter().sum::<f64>() / kappa);
    let mut tau = upper;
    for &t in &knots {
        let g = clip_slope(sample_eigs, kappa, t);
        if g <= 0.0 {
            let mid = 0.5 * (lo + t);
            let active = sample_eigs
                .iter()
                .filter(|&&l| l < mid || l > kappa * mid)
                .count() as f64;
            tau = if active > 0.0 { (lo + g_lo / active).min(t) } else { t };
            break;
        }
        lo = t;
        g_lo = g;
    }
    let shrunk = sample_eigs.iter().map(|&l| l.clamp(tau, kappa * tau)).collect();
    Ok((tau, shrunk))
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending and clamped at 0.
fn spectrum(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn reassemble(vectors: &DMatrix<f64>, eigs: &[f64]) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| vectors[(r, c)] * eigs[c]);
    let m = scaled * vectors.transpose();
    (&m + m.transpose()) * 0.5
}

/// Condition-number-constrained MLE for a fixed bound `kappa`.
pub fn cond_reg_fit(s: &SampleSet, kappa: f64) -> Result<(SpdMatrix, f64)> {
    let cov = sample_covariance(s);
    if cov.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSample);
    }
    let (eigs, vectors) = spectrum(&cov);
    let (tau, shrunk) = cond_reg_solve(&eigs, kappa)?;
    Ok((SpdMatrix::certified(reassemble(&vectors, &shrunk))?, tau))
}

/// Sum over the columns of `held_out` of the Gaussian log-density under
/// each clipped training spectrum.
fn held_out_scores(train: &SampleSet, held_out: &DMatrix<f64>, kappas: &[f64], fold: usize) -> Result<Vec<f64>> {
    let cov = sample_covariance(train);
    if cov.iter().all(|&v| v == 0.0) {
        return Err(Error::FoldTooSmall { fold });
    }
    let (eigs, vectors) = spectrum(&cov);
    let proj = vectors.transpose() * held_out;
    let n = eigs.len() as f64;
    kappas
        .iter()
        .map(|&kappa| {
            let (_, m) = cond_reg_solve(&eigs, kappa)?;
            let log_det: f64 = m.iter().map(|v| v.ln()).sum();
            let quad: f64 = proj
                .column_iter()
                .map(|y| y.iter().zip(&m).map(|(yi, mi)| yi * yi / mi).sum::<f64>())
                .sum();
            let cols = held_out.ncols() as f64;
            Ok(-0.5 * (cols * (log_det + n * (2.0 * PI).ln()) + quad))
        })
        .collect()
}

/// Selects `kappa` from `kappa_grid` by K-fold cross-validated Gaussian
/// log-likelihood, then refits on the full sample.
///
/// Columns are permuted with a generator seeded by `shuffle_seed` and cut
/// into `folds` contiguous blocks. Ties go to the smaller bound.
pub fn cond_reg_cv(s: &SampleSet, kappa_grid: &[f64], folds: usize, shuffle_seed: u64) -> Result<CondRegResult> {
    let big_n = s.size();
    if folds < 2 || big_n < folds {
        return Err(Error::InvalidInput(format!(
            "need N >= K >= 2, got N = {big_n}, K = {folds}"
        )));
    }
    if kappa_grid.is_empty() || kappa_grid.iter().any(|k| !(*k >= 1.0)) {
        return Err(Error::InvalidInput("kappa grid must be non-empty with entries >= 1".into()));
    }
    if s.data().iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSample);
    }
    let mut order: Vec<usize> = (0..big_n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let bounds: Vec<usize> = (0..=folds).map(|f| f * big_n / folds).collect();

    let per_fold: Vec<Result<Vec<f64>>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let test = &order[bounds[f]..bounds[f + 1]];
            let train: Vec<usize> = order[..bounds[f]]
                .iter()
                .chain(&order[bounds[f + 1]..])
                .copied()
                .collect();
            let held_out = s.select_columns(test)?;
            held_out_scores(&s.select_columns(&train)?, held_out.data(), kappa_grid, f)
        })
        .collect();
    let mut totals = vec![0.0; kappa_grid.len()];
    for fold in per_fold {
        for (t, v) in totals.iter_mut().zip(fold?) {
            *t += v;
        }
    }
    let cv_scores: Vec<(f64, f64)> = kappa_grid
        .iter()
        .zip(&totals)
        .map(|(&k, &t)| (k, t / big_n as f64))
        .collect();
    let best = cv_scores
        .iter()
        .copied()
        .reduce(|a, b| {
            if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                b
            } else {
                a
            }
        })
        .expect("grid is non-empty");
    let (estimate, tau) = cond_reg_fit(s, best.0)?;
    Ok(CondRegResult {
        estimate,
        kappa: best.0,
        tau,
        cv_scores,
    })
}
