//! Fisher information of every model level, projected asymptotic
//! covariances, and the ordering checks between nested models.
//!
//! The ambient parameter space for the spectral models is the diagonal
//! family `(d_1, ..., d_n)`, whose per-observation information is
//! `diag(1 / (2 d_i^2))`. A sub-model with Jacobian `G = dd/dphi` has
//! asymptotic covariance `Q = G (G^T J G)^-1 G^T` in that space.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::estimators::gmrf_hessian;
use crate::model::{decay_diagonal, DecayFamily, DecayModel, DiagonalCovariance, GmrfStructure};

/// Minimum-eigenvalue tolerance of [`psd_order_check`].
pub const PSD_TOL: f64 = 1e-8;
/// Relative eigenvalue floor below which information is treated as singular.
const SINGULAR_RTOL: f64 = 1e-12;

/// Per-observation Fisher information with parameter names.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    pub param_labels: Vec<String>,
}

impl FisherInfo {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }
}

/// Asymptotic covariance of a sub-model MLE embedded in the ambient space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCov {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

impl ProjectedCov {
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `diag(1/(2 d_1^2), ..., 1/(2 d_n^2))`.
pub fn fisher_diag(d: &DiagonalCovariance) -> FisherInfo {
    let v: Vec<f64> = d.variances().iter().map(|x| 0.5 / (x * x)).collect();
    FisherInfo {
        matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v)),
        param_labels: (1..=d.len()).map(|i| format!("d{i}")).collect(),
    }
}

/// Information of `(c, alpha)` in the two-parameter decay model.
pub fn fisher_decay2(model: &DecayModel) -> Result<FisherInfo> {
    if model.family() != DecayFamily::TwoParam {
        return Err(Error::FamilyMismatch { expected: "TwoParam" });
    }
    let (c, _, _) = model.params().as_three();
    let n = model.dim() as f64;
    // f_i'/f_i = -lambda_i = h_i
    let sum_h: f64 = model.h().iter().sum();
    let sum_h2: f64 = model.h().iter().map(|h| h * h).sum();
    let cross = sum_h / (2.0 * c);
    Ok(FisherInfo {
        matrix: DMatrix::from_row_slice(2, 2, &[n / (2.0 * c * c), cross, cross, 0.5 * sum_h2]),
        param_labels: labels(DecayFamily::TwoParam.labels()),
    })
}

/// Information of `(c1, c2, alpha)` in the three-parameter decay model.
pub fn fisher_decay3(model: &DecayModel) -> Result<FisherInfo> {
    if model.family() != DecayFamily::ThreeParam {
        return Err(Error::FamilyMismatch { expected: "ThreeParam" });
    }
    let (c1, c2, _) = model.params().as_three();
    let mut m = DMatrix::zeros(3, 3);
    for &h in model.h() {
        let a = c1 + c2 * h;
        let inv_a2 = 1.0 / (a * a);
        // (1/f_i) df_i/dalpha = h_i
        m[(0, 0)] += inv_a2;
        m[(0, 1)] += h * inv_a2;
        m[(0, 2)] += h / a;
        m[(1, 1)] += h * h * inv_a2;
        m[(1, 2)] += h * h / a;
        m[(2, 2)] += h * h;
    }
    for i in 0..3 {
        for j in i..3 {
            m[(i, j)] *= 0.5;
            m[(j, i)] = m[(i, j)];
        }
    }
    Ok(FisherInfo {
        matrix: m,
        param_labels: labels(DecayFamily::ThreeParam.labels()),
    })
}

/// Per-observation GMRF information `(1/2) Tr(P^-1 B_j P^-1 B_l)`.
pub fn fisher_gmrf(theta: &[f64], structure: &GmrfStructure) -> Result<FisherInfo> {
    let h = gmrf_hessian(theta, structure, 1)?;
    Ok(FisherInfo {
        matrix: -h,
        param_labels: structure.labels(),
    })
}

/// Analytic Jacobian `dd_i / dparam_j` of a decay model at its parameters.
pub fn decay_jacobian(model: &DecayModel) -> DMatrix<f64> {
    let d = decay_diagonal(model);
    let (c1, c2, _) = model.params().as_three();
    let n = model.dim();
    match model.family() {
        DecayFamily::TwoParam => DMatrix::from_fn(n, 2, |i, j| {
            let di = d.variances()[i];
            match j {
                0 => -di / c1,
                _ => model.lambda()[i] * di,
            }
        }),
        DecayFamily::ThreeParam => DMatrix::from_fn(n, 3, |i, j| {
            let di = d.variances()[i];
            let h = model.h()[i];
            let a = c1 + c2 * h;
            match j {
                0 => -di / a,
                1 => -di * h / a,
                _ => model.lambda()[i] * di,
            }
        }),
    }
}

/// `Q = G (G^T J G)^-1 G^T`.
pub fn projected_cov(j: &FisherInfo, g: &DMatrix<f64>) -> Result<ProjectedCov> {
    if g.nrows() != j.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} Jacobian rows", j.dim()),
            actual: format!("{}", g.nrows()),
        });
    }
    let k = g.ncols();
    let m = g.transpose() * &j.matrix * g;
    // Jacobi scaling makes the singularity test independent of parameter units.
    let scale: Vec<f64> = (0..k)
        .map(|i| {
            let v = m[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    if scale.iter().any(|&s| s == 0.0) {
        return Err(Error::SingularInformation);
    }
    let scaled = DMatrix::from_fn(k, k, |a, b| m[(a, b)] * scale[a] * scale[b]);
    let eig = SymmetricEigen::new(scaled.clone()).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > SINGULAR_RTOL * hi) {
        return Err(Error::SingularInformation);
    }
    let inv_scaled = scaled
        .cholesky()
        .ok_or(Error::SingularInformation)?
        .inverse();
    let inv = DMatrix::from_fn(k, k, |a, b| inv_scaled[(a, b)] * scale[a] * scale[b]);
    let q = g * inv * g.transpose();
    let q = (&q + q.transpose()) * 0.5;
    Ok(ProjectedCov { matrix: q, rank: k })
}

/// `Q` of the unrestricted diagonal model: `J^-1 = diag(2 d_i^2)`.
pub fn diag_projected_cov(d: &DiagonalCovariance) -> ProjectedCov {
    let v: Vec<f64> = d.variances().iter().map(|x| 2.0 * x * x).collect();
    ProjectedCov {
        matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v)),
        rank: d.len(),
    }
}

/// `Q` of a decay model inside the diagonal family.
///
/// For the three-parameter family the Jacobian loses rank at `c2 = 0`
/// (the `c2` and `alpha` columns become proportional). `Q` depends only on
/// the column space, so the basis `d_i / a_i * (1, h_i, h_i^2)` is used
/// instead: it spans the Jacobian's range whenever `c2 != 0` and is its
/// continuous limit at `c2 = 0`.
pub fn decay_projected_cov(model: &DecayModel) -> Result<ProjectedCov> {
    let d = decay_diagonal(model);
    let j = fisher_diag(&d);
    match model.family() {
        DecayFamily::TwoParam => projected_cov(&j, &decay_jacobian(model)),
        DecayFamily::ThreeParam => {
            let (c1, c2, _) = model.params().as_three();
            let basis = DMatrix::from_fn(model.dim(), 3, |i, k| {
                let h = model.h()[i];
                d.variances()[i] / (c1 + c2 * h) * h.powi(k as i32)
            });
            projected_cov(&j, &basis)
        }
    }
}

/// Asymptotic mean squared error `(1/N) Tr Q`.
pub fn asymptotic_mse(q: &ProjectedCov, n_samples: usize) -> f64 {
    q.trace() / n_samples as f64
}

/// Minimum eigenvalue of `Q_big - Q_small` and whether it is at least `-PSD_TOL`.
pub fn psd_order_check(q_small: &ProjectedCov, q_big: &ProjectedCov) -> Result<(f64, bool)> {
    if q_small.matrix.shape() != q_big.matrix.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", q_big.matrix.shape()),
            actual: format!("{:?}", q_small.matrix.shape()),
        });
    }
    let diff = &q_big.matrix - &q_small.matrix;
    let diff = (&diff + diff.transpose()) * 0.5;
    let min = min_eigenvalue(&diff);
    Ok((min, min >= -PSD_TOL))
}
