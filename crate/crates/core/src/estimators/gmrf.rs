//! Banded-precision GMRF likelihood, its derivatives, and the Newton MLE.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::FitReport;
use crate::error::{Error, Result};
use crate::model::{precision_matrix, GmrfStructure};

const MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 50;
/// Converged when `max_j |score_j| / (N/2) <= SCORE_TOL`.
const SCORE_TOL: f64 = 1e-8;
/// Newton keeps polishing until this level or until no step makes progress.
const POLISH_TOL: f64 = 1e-12;

/// Factorization of `P(theta)` and derived quantities shared by the
/// likelihood, score and Hessian.
struct Factored {
    log_det: f64,
    inverse: DMatrix<f64>,
}

fn factor(structure: &GmrfStructure, theta: &[f64]) -> Result<Factored> {
    let p = precision_matrix(structure, theta)?;
    let chol: Cholesky<f64, Dyn> = Cholesky::new(p).ok_or(Error::NotPositiveDefinite)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(Factored {
        log_det,
        inverse: chol.inverse(),
    })
}

fn check_sigma(sigma_hat: &DMatrix<f64>, structure: &GmrfStructure) -> Result<()> {
    let n = structure.dim();
    if sigma_hat.nrows() != n || sigma_hat.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n}"),
            actual: format!("{}x{}", sigma_hat.nrows(), sigma_hat.ncols()),
        });
    }
    Ok(())
}

/// `(N/2) log det P - (N/2) Tr(P Sigma_hat) - (nN/2) log(2 pi)`.
pub fn gmrf_loglik(theta: &[f64], sigma_hat: &DMatrix<f64>, structure: &GmrfStructure, n_samples: usize) -> Result<f64> {
    check_sigma(sigma_hat, structure)?;
    let f = factor(structure, theta)?;
    let moments = structure.basis_traces(sigma_hat);
    let trace: f64 = theta.iter().zip(&moments).map(|(t, m)| t * m).sum();
    let half_n = 0.5 * n_samples as f64;
    Ok(half_n * (f.log_det - trace - structure.dim() as f64 * (2.0 * PI).ln()))
}

/// `(N/2) [Tr(P^-1 B_j) - Tr(Sigma_hat B_j)]` for every basis.
pub fn gmrf_score(theta: &[f64], sigma_hat: &DMatrix<f64>, structure: &GmrfStructure, n_samples: usize) -> Result<Vec<f64>> {
    check_sigma(sigma_hat, structure)?;
    let f = factor(structure, theta)?;
    let half_n = 0.5 * n_samples as f64;
    Ok(normalized_score(&f, &structure.basis_traces(sigma_hat), structure)
        .iter()
        .map(|g| half_n * g)
        .collect())
}

/// `-(N/2) Tr(P^-1 B_j P^-1 B_l)`.
pub fn gmrf_hessian(theta: &[f64], structure: &GmrfStructure, n_samples: usize) -> Result<DMatrix<f64>> {
    let f = factor(structure, theta)?;
    Ok(trace_products(&f.inverse, structure) * (-0.5 * n_samples as f64))
}

fn normalized_score(f: &Factored, moments: &[f64], structure: &GmrfStructure) -> Vec<f64> {
    structure
        .basis_traces(&f.inverse)
        .iter()
        .zip(moments)
        .map(|(a, b)| a - b)
        .collect()
}

/// `Tr(W B_j W B_l)` for a symmetric `W`, summed over the sparse basis pairs.
pub(crate) fn trace_products(w: &DMatrix<f64>, structure: &GmrfStructure) -> DMatrix<f64> {
    let bases = structure.bases();
    let p = bases.len();
    let mut out = DMatrix::zeros(p, p);
    for j in 0..p {
        for l in j..p {
            let mut acc = 0.0;
            for &(q, r) in &bases[j] {
                for &(s, t) in &bases[l] {
                    acc += w[(t, q)] * w[(r, s)];
                }
            }
            out[(j, l)] = acc;
            out[(l, j)] = acc;
        }
    }
    out
}

/// Newton MLE of `theta` for `Sigma^-1 = sum_j theta_j B_j`.
///
/// Steps are halved until `P(theta)` stays positive definite and the
/// likelihood does not decrease. The default start is
/// `(1 / mean(diag Sigma_hat), 0, ..., 0)`.
pub fn fit_gmrf(sigma_hat: &DMatrix<f64>, structure: &GmrfStructure, init: Option<&[f64]>) -> Result<FitReport> {
    check_sigma(sigma_hat, structure)?;
    let p = structure.num_params();
    let mut theta = match init {
        Some(t) => {
            if t.len() != p {
                return Err(Error::ShapeMismatch {
                    expected: format!("{p} parameters"),
                    actual: format!("{}", t.len()),
                });
            }
            t.to_vec()
        }
        None => {
            let mean_diag = sigma_hat.diagonal().mean();
            if !(mean_diag > 0.0) {
                return Err(Error::DegenerateSample);
            }
            let mut t = vec![0.0; p];
            t[0] = 1.0 / mean_diag;
            t
        }
    };
    let moments = structure.basis_traces(sigma_hat);
    let merit = |f: &Factored, theta: &[f64]| {
        f.log_det - theta.iter().zip(&moments).map(|(t, m)| t * m).sum::<f64>()
    };

    let mut fac = factor(structure, &theta)?;
    let mut value = merit(&fac, &theta);
    let mut grad = normalized_score(&fac, &moments, structure);
    let mut iterations = 0;
    loop {
        let residual = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let done = |theta: Vec<f64>, iterations| FitReport {
            params: theta,
            iterations,
            residual_norm: residual,
            converged: true,
        };
        if residual <= POLISH_TOL {
            return Ok(done(theta, iterations));
        }
        if iterations >= MAX_ITER {
            if residual <= SCORE_TOL {
                return Ok(done(theta, iterations));
            }
            return Err(Error::NotConverged { iterations, residual });
        }
        iterations += 1;

        let info = trace_products(&fac.inverse, structure);
        let chol = Cholesky::new(info).ok_or(Error::SingularHessian)?;
        let step = chol.solve(&DVector::from_column_slice(&grad));
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularHessian);
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if let Ok(f) = factor(structure, &cand) {
                let v = merit(&f, &cand);
                let g = normalized_score(&f, &moments, structure);
                let r_new = g.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                if v > value || (v >= value - 1e-12 * (1.0 + value.abs()) && r_new < residual) {
                    theta = cand;
                    fac = f;
                    value = v;
                    grad = g;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if residual <= SCORE_TOL {
                return Ok(done(theta, iterations));
            }
            return Err(Error::NotConverged { iterations, residual });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gmrf_structure, precision_assemble, NeighborLevel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cov(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, 2 * n, |_, _| rng.random_range(-1.0..1.0));
        (&a * a.transpose()) / (2 * n) as f64
    }

    #[test]
    fn loglik_at_identity() {
        let s = gmrf_structure(4, 3, NeighborLevel::N4).unwrap();
        let n = 12.0;
        let v = gmrf_loglik(&[1.0, 0.0, 0.0], &DMatrix::identity(12, 12), &s, 7).unwrap();
        let expect = -3.5 * (n + n * (2.0 * PI).ln());
        assert!((v - expect).abs() < 1e-10);
    }

    #[test]
    fn loglik_ignores_zero_weight_bases() {
        let s4 = gmrf_structure(4, 4, NeighborLevel::N4).unwrap();
        let s8 = gmrf_structure(4, 4, NeighborLevel::N8).unwrap();
        let sig = random_cov(16, 3);
        let a = gmrf_loglik(&[2.0, -0.3, 0.4], &sig, &s4, 9).unwrap();
        let b = gmrf_loglik(&[2.0, -0.3, 0.4, 0.0, 0.0], &sig, &s8, 9).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn loglik_matches_dense_density_sum() {
        let s = gmrf_structure(3, 4, NeighborLevel::N8).unwrap();
        let theta = [3.0, -0.4, 0.3, 0.1, -0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-1.0..1.0));
        let sig = (&x * x.transpose()) / 5.0;
        let p = precision_assemble(&s, &theta).unwrap();
        let cov = p.values().clone().try_inverse().unwrap();
        let det = cov.determinant();
        let mut oracle = 0.0;
        for col in x.column_iter() {
            let q = (col.transpose() * p.values() * col)[(0, 0)];
            oracle += -0.5 * q - 0.5 * det.ln() - 6.0 * (2.0 * PI).ln();
        }
        let v = gmrf_loglik(&theta, &sig, &s, 5).unwrap();
        assert!((v - oracle).abs() <= 1e-10 * oracle.abs(), "{v} vs {oracle}");
    }

    #[test]
    fn score_zero_at_identity() {
        let s = gmrf_structure(4, 4, NeighborLevel::N4).unwrap();
        let g = gmrf_score(&[1.0, 0.0, 0.0], &DMatrix::identity(16, 16), &s, 10).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn score_and_hessian_match_finite_differences() {
        let s = gmrf_structure(4, 3, NeighborLevel::N12).unwrap();
        let theta = [4.0, -0.3, 0.5, 0.1, -0.15, 0.05, 0.08];
        let sig = random_cov(12, 8);
        let g = gmrf_score(&theta, &sig, &s, 6).unwrap();
        let h = gmrf_hessian(&theta, &s, 6).unwrap();
        let step = 1e-5;
        for j in 0..theta.len() {
            let (mut up, mut dn) = (theta, theta);
            up[j] += step;
            dn[j] -= step;
            let fd = (gmrf_loglik(&up, &sig, &s, 6).unwrap() - gmrf_loglik(&dn, &sig, &s, 6).unwrap()) / (2.0 * step);
            assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "score {j}");
            let gu = gmrf_score(&up, &sig, &s, 6).unwrap();
            let gd = gmrf_score(&dn, &sig, &s, 6).unwrap();
            for l in 0..theta.len() {
                let fdh = (gu[l] - gd[l]) / (2.0 * step);
                assert!((h[(l, j)] - fdh).abs() <= 1e-4 * fdh.abs().max(1e-3), "hess {l},{j}");
            }
        }
    }

    #[test]
    fn hessian_identity_entry_and_definiteness() {
        let s = gmrf_structure(10, 10, NeighborLevel::N4).unwrap();
        let h = gmrf_hessian(&[1.0, 0.0, 0.0], &s, 8).unwrap();
        assert!((h[(0, 0)] + 4.0 * 100.0).abs() < 1e-10);
        let h = gmrf_hessian(&[5.0, -0.2, 0.5], &s, 8).unwrap();
        let eig = nalgebra::SymmetricEigen::new(h).eigenvalues;
        assert!(eig.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn population_input_recovers_truth() {
        let s = gmrf_structure(10, 10, NeighborLevel::N4).unwrap();
        let truth = [5.0, -0.2, 0.5];
        let sigma = precision_assemble(&s, &truth).unwrap().into_values().try_inverse().unwrap();
        let fit = fit_gmrf(&sigma, &s, None).unwrap();
        assert!(fit.converged && fit.residual_norm <= 1e-8);
        for (a, b) in fit.params.iter().zip(truth) {
            assert!((a - b).abs() <= 1e-7 * b.abs(), "{:?}", fit.params);
        }
        // larger model puts zero weight on absent neighbours
        let s12 = gmrf_structure(10, 10, NeighborLevel::N12).unwrap();
        let fit = fit_gmrf(&sigma, &s12, None).unwrap();
        assert!(fit.params[3..].iter().all(|v| v.abs() < 1e-7), "{:?}", fit.params);
    }

    #[test]
    fn larger_structure_attains_higher_likelihood() {
        let s4 = gmrf_structure(5, 5, NeighborLevel::N4).unwrap();
        let s8 = gmrf_structure(5, 5, NeighborLevel::N8).unwrap();
        let truth = [5.0, -0.2, 0.5];
        let sigma = precision_assemble(&s4, &truth).unwrap().into_values().try_inverse().unwrap();
        let l = Cholesky::new(sigma).unwrap().unpack();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = DMatrix::from_fn(25, 40, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let x = &l * z;
        let sig = (&x * x.transpose()) / 40.0;
        let f4 = fit_gmrf(&sig, &s4, None).unwrap();
        let f8 = fit_gmrf(&sig, &s8, None).unwrap();
        assert!(f8.params[3].abs() < 0.2 && f8.params[4].abs() < 0.2);
        let l4 = gmrf_loglik(&f4.params, &sig, &s4, 40).unwrap();
        let l8 = gmrf_loglik(&f8.params, &sig, &s8, 40).unwrap();
        assert!(l8 >= l4 - 1e-9 * l4.abs());
    }

    #[test]
    fn infeasible_theta_is_reported() {
        let s = gmrf_structure(3, 3, NeighborLevel::N4).unwrap();
        assert!(matches!(
            gmrf_loglik(&[0.1, -0.2, 0.5], &DMatrix::identity(9, 9), &s, 1),
            Err(Error::NotPositiveDefinite)
        ));
    }
}
