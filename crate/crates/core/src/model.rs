//! Covariance model structures: samples, certified SPD matrices, the
//! spectral decay family on Laplace eigenvalues, and banded GMRF precision
//! parameterizations.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

const SYMMETRY_RTOL: f64 = 1e-12;

/// An `n x N` collection of zero-mean observations, one column per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: DMatrix<f64>,
    seed: Option<u64>,
}

impl SampleSet {
    pub fn new(data: DMatrix<f64>, seed: Option<u64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "sample must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sample contains non-finite entries".into()));
        }
        Ok(Self { data, seed })
    }

    /// Builds a sample from observation vectors (each inner slice is one column).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("columns have unequal lengths".into()));
        }
        let data = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        Self::new(data, None)
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Sample size `N`.
    pub fn size(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Subset of columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let data = DMatrix::from_fn(self.dim(), cols.len(), |i, j| self.data[(i, cols[j])]);
        Self::new(data, self.seed)
    }
}

/// Dense symmetric matrix with an optional Cholesky factor proving
/// positive definiteness.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    values: DMatrix<f64>,
    pd_certificate: Option<DMatrix<f64>>,
}

impl SpdMatrix {
    /// Symmetric matrix without a definiteness certificate.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&values)?;
        Ok(Self {
            values,
            pd_certificate: None,
        })
    }

    /// Symmetric matrix that must factor as `L L^T`.
    pub fn certified(values: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&values)?;
        let chol = Cholesky::new(values.clone()).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.unpack();
        if l.diagonal().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            values,
            pd_certificate: Some(l),
        })
    }

    /// Attaches a certificate when the factorization succeeds, otherwise
    /// keeps the matrix uncertified.
    pub fn try_certified(values: DMatrix<f64>) -> Result<Self> {
        match Self::certified(values.clone()) {
            Ok(m) => Ok(m),
            Err(Error::NotPositiveDefinite) => Self::new(values),
            Err(e) => Err(e),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Lower-triangular factor `L` with `L L^T = values`, when certified.
    pub fn certificate(&self) -> Option<&DMatrix<f64>> {
        self.pd_certificate.as_ref()
    }

    pub fn is_certified(&self) -> bool {
        self.pd_certificate.is_some()
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// `log det`, available only for certified matrices.
    pub fn log_det(&self) -> Option<f64> {
        self.pd_certificate
            .as_ref()
            .map(|l| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch {
            expected: "square matrix".into(),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix contains non-finite entries".into()));
    }
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Diagonal covariance `diag(d)` together with the precisions `tau = 1/d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCovariance {
    d: Vec<f64>,
    tau: Vec<f64>,
}

impl DiagonalCovariance {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(index) = d.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositiveVariance { index });
        }
        let tau = d.iter().map(|v| 1.0 / v).collect();
        Ok(Self { d, tau })
    }

    pub fn variances(&self) -> &[f64] {
        &self.d
    }

    pub fn precisions(&self) -> &[f64] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.d))
    }
}

/// Eigenvalues of the Dirichlet 5-point Laplacian on an `m x k` interior
/// grid of the unit square, sorted descending (closest to zero first).
///
/// Mesh width is `1/(m+1)` along rows and `1/(k+1)` along columns.
pub fn laplace_eigenvalues(m: usize, k: usize) -> Result<Vec<f64>> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidInput(format!("grid must be non-empty, got {m}x{k}")));
    }
    let row_factor = |j: usize| {
        let s = (j as f64 * PI / (2.0 * (m as f64 + 1.0))).sin();
        4.0 * (m as f64 + 1.0).powi(2) * s * s
    };
    let col_factor = |l: usize| {
        let s = (l as f64 * PI / (2.0 * (k as f64 + 1.0))).sin();
        4.0 * (k as f64 + 1.0).powi(2) * s * s
    };
    let mut out = Vec::with_capacity(m * k);
    for l in 1..=k {
        for j in 1..=m {
            out.push(-(row_factor(j) + col_factor(l)));
        }
    }
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecayFamily {
    /// `d_i = (c f_i(alpha))^-1`
    TwoParam,
    /// `d_i = ((c1 + c2 h_i) f_i(alpha))^-1`
    ThreeParam,
}

impl DecayFamily {
    pub fn num_params(self) -> usize {
        match self {
            DecayFamily::TwoParam => 2,
            DecayFamily::ThreeParam => 3,
        }
    }

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            DecayFamily::TwoParam => &["c", "alpha"],
            DecayFamily::ThreeParam => &["c1", "c2", "alpha"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayParams {
    Two { c: f64, alpha: f64 },
    Three { c1: f64, c2: f64, alpha: f64 },
}

impl DecayParams {
    pub fn family(&self) -> DecayFamily {
        match self {
            DecayParams::Two { .. } => DecayFamily::TwoParam,
            DecayParams::Three { .. } => DecayFamily::ThreeParam,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            DecayParams::Two { c, alpha } => vec![c, alpha],
            DecayParams::Three { c1, c2, alpha } => vec![c1, c2, alpha],
        }
    }

    pub fn from_slice(family: DecayFamily, p: &[f64]) -> Result<Self> {
        match (family, p) {
            (DecayFamily::TwoParam, &[c, alpha]) => Ok(DecayParams::Two { c, alpha }),
            (DecayFamily::ThreeParam, &[c1, c2, alpha]) => Ok(DecayParams::Three { c1, c2, alpha }),
            _ => Err(Error::ShapeMismatch {
                expected: format!("{} parameters", family.num_params()),
                actual: format!("{}", p.len()),
            }),
        }
    }

    /// Embeds into the three-parameter family (`c2 = 0` for the two-parameter case).
    pub fn as_three(&self) -> (f64, f64, f64) {
        match *self {
            DecayParams::Two { c, alpha } => (c, 0.0, alpha),
            DecayParams::Three { c1, c2, alpha } => (c1, c2, alpha),
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            DecayParams::Two { alpha, .. } | DecayParams::Three { alpha, .. } => alpha,
        }
    }
}

/// Spectral-diagonal decay model on Laplace eigenvalues `lambda_i < 0`,
/// with weights `h_i = -lambda_i` and decay `f_i(alpha) = exp(-alpha lambda_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayModel {
    lambda: Vec<f64>,
    h: Vec<f64>,
    params: DecayParams,
}

impl DecayModel {
    pub fn new(lambda: Vec<f64>, params: DecayParams) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = lambda.iter().position(|&l| !(l < 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "Laplace eigenvalue {i} must be strictly negative, got {}",
                lambda[i]
            )));
        }
        let h: Vec<f64> = lambda.iter().map(|l| -l).collect();
        decay_variances(&h, &params)?;
        Ok(Self { lambda, h, params })
    }

    /// Model on the Laplace spectrum of an `m x k` grid.
    pub fn on_grid(m: usize, k: usize, params: DecayParams) -> Result<Self> {
        Self::new(laplace_eigenvalues(m, k)?, params)
    }

    /// Same spectrum, different parameters.
    pub fn with_params(&self, params: DecayParams) -> Result<Self> {
        decay_variances(&self.h, &params)?;
        Ok(Self {
            lambda: self.lambda.clone(),
            h: self.h.clone(),
            params,
        })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn params(&self) -> &DecayParams {
        &self.params
    }

    pub fn family(&self) -> DecayFamily {
        self.params.family()
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// True when at least two eigenvalues differ, so `alpha` is identifiable.
    pub fn is_identifiable(&self) -> bool {
        self.h.iter().any(|&v| v != self.h[0])
    }
}

/// Variances `d_i` for arbitrary parameters on weights `h`.
pub(crate) fn decay_variances(h: &[f64], params: &DecayParams) -> Result<Vec<f64>> {
    let (c1, c2, alpha) = params.as_three();
    if !(c1.is_finite() && c2.is_finite() && alpha.is_finite()) {
        return Err(Error::InvalidInput("decay parameters must be finite".into()));
    }
    h.iter()
        .enumerate()
        .map(|(index, &hi)| {
            let a = c1 + c2 * hi;
            if !(a > 0.0) {
                return Err(Error::NonPositiveVariance { index });
            }
            // f_i(alpha) = exp(alpha h_i)
            let d = (-(a.ln() + alpha * hi)).exp();
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonPositiveVariance { index })
            }
        })
        .collect()
}

/// Evaluates the diagonal covariance of a decay model.
pub fn decay_diagonal(model: &DecayModel) -> DiagonalCovariance {
    let d = decay_variances(&model.h, &model.params)
        .expect("decay model parameters are validated at construction");
    DiagonalCovariance::new(d).expect("decay variances are positive")
}

/// Neighbourhood size of the banded GMRF precision model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NeighborLevel {
    N4,
    N8,
    N12,
}

impl NeighborLevel {
    pub const ALL: [NeighborLevel; 3] = [NeighborLevel::N4, NeighborLevel::N8, NeighborLevel::N12];

    pub fn num_params(self) -> usize {
        match self {
            NeighborLevel::N4 => 3,
            NeighborLevel::N8 => 5,
            NeighborLevel::N12 => 7,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            NeighborLevel::N4 => "gmrf_n4",
            NeighborLevel::N8 => "gmrf_n8",
            NeighborLevel::N12 => "gmrf_n12",
        }
    }
}

// (row offset, column offset) of each non-identity neighbour class, in basis order.
const NEIGHBOR_CLASSES: [(isize, isize); 6] = [(1, 0), (0, 1), (1, 1), (-1, 1), (2, 0), (0, 2)];

const BASIS_LABELS: [&str; 7] = [
    "diagonal",
    "vertical",
    "horizontal",
    "diag_se",
    "diag_ne",
    "vertical2",
    "horizontal2",
];

/// Symmetric 0/1 basis matrices `B_j` of a banded precision model on an
/// `m x k` grid whose columns are stacked (index = row + m * col).
#[derive(Debug, Clone, PartialEq)]
pub struct GmrfStructure {
    rows: usize,
    cols: usize,
    level: NeighborLevel,
    bases: Vec<Vec<(usize, usize)>>,
}

impl GmrfStructure {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn level(&self) -> NeighborLevel {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_params(&self) -> usize {
        self.bases.len()
    }

    /// Directed index pairs of each basis; both `(a, b)` and `(b, a)` are listed.
    pub fn bases(&self) -> &[Vec<(usize, usize)>] {
        &self.bases
    }

    pub fn labels(&self) -> Vec<String> {
        BASIS_LABELS[..self.bases.len()].iter().map(|s| s.to_string()).collect()
    }

    pub fn basis_matrix(&self, j: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut b = DMatrix::zeros(n, n);
        for &(a, c) in &self.bases[j] {
            b[(a, c)] = 1.0;
        }
        b
    }

    /// `Tr(B_j M)` for every basis.
    pub fn basis_traces(&self, m: &DMatrix<f64>) -> Vec<f64> {
        self.bases
            .iter()
            .map(|pairs| pairs.iter().map(|&(a, b)| m[(b, a)]).sum())
            .collect()
    }
}

/// Builds the neighbour bases of the requested level.
pub fn gmrf_structure(m: usize, k: usize, level: NeighborLevel) -> Result<GmrfStructure> {
    if m < 3 || k < 3 {
        return Err(Error::GridTooSmall { rows: m, cols: k });
    }
    let n = m * k;
    let mut bases = vec![(0..n).map(|i| (i, i)).collect::<Vec<_>>()];
    for &(dr, dc) in &NEIGHBOR_CLASSES[..level.num_params() - 1] {
        let mut pairs = Vec::new();
        for c in 0..k {
            for r in 0..m {
                let (r2, c2) = (r as isize + dr, c as isize + dc);
                if r2 < 0 || c2 < 0 || r2 >= m as isize || c2 >= k as isize {
                    continue;
                }
                let a = r + m * c;
                let b = r2 as usize + m * c2 as usize;
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        pairs.sort_unstable();
        bases.push(pairs);
    }
    Ok(GmrfStructure {
        rows: m,
        cols: k,
        level,
        bases,
    })
}

/// `sum_j theta_j B_j` without a definiteness check.
pub fn precision_matrix(structure: &GmrfStructure, theta: &[f64]) -> Result<DMatrix<f64>> {
    if theta.len() != structure.num_params() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} parameters", structure.num_params()),
            actual: format!("{}", theta.len()),
        });
    }
    let n = structure.dim();
    let mut p = DMatrix::zeros(n, n);
    for (pairs, &t) in structure.bases.iter().zip(theta) {
        for &(a, b) in pairs {
            p[(a, b)] += t;
        }
    }
    Ok(p)
}

/// Assembles `P(theta) = sum_j theta_j B_j` and certifies it positive definite.
pub fn precision_assemble(structure: &GmrfStructure, theta: &[f64]) -> Result<SpdMatrix> {
    SpdMatrix::certified(precision_matrix(structure, theta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn laplace_single_node() {
        let l = laplace_eigenvalues(1, 1).unwrap();
        assert_eq!(l.len(), 1);
        assert!((l[0] + 16.0).abs() < 1e-12);
    }

    #[test]
    fn laplace_ten_by_ten() {
        let l = laplace_eigenvalues(10, 10).unwrap();
        assert_eq!(l.len(), 100);
        // -968 sin^2(pi/22), evaluated independently
        assert!((l[0] - -19.605_400_772_5).abs() < 1e-8, "{}", l[0]);
        assert!(l.iter().all(|&v| v < 0.0));
        assert!(l.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn laplace_two_by_one_distinct() {
        let l = laplace_eigenvalues(2, 1).unwrap();
        assert!(l[0] < 0.0 && l[1] < 0.0 && l[0] != l[1]);
    }

    #[test]
    fn laplace_transpose_invariant() {
        let mut a = laplace_eigenvalues(4, 7).unwrap();
        let mut b = laplace_eigenvalues(7, 4).unwrap();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn laplace_rejects_empty_grid() {
        assert!(laplace_eigenvalues(0, 3).is_err());
    }

    #[test]
    fn decay_identity_at_zero_rate() {
        let m = DecayModel::on_grid(3, 4, DecayParams::Two { c: 1.0, alpha: 0.0 }).unwrap();
        assert!(decay_diagonal(&m).variances().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn decay_reference_configuration_is_decreasing() {
        let lambda = laplace_eigenvalues(10, 10).unwrap();
        let m = DecayModel::new(lambda.clone(), DecayParams::Two { c: 30.0, alpha: 0.002 }).unwrap();
        let d = decay_diagonal(&m);
        for (di, li) in d.variances().iter().zip(&lambda) {
            let expect = (0.002 * li).exp() / 30.0;
            assert!((di - expect).abs() <= 1e-15 * expect);
        }
        assert!(d.variances().windows(2).all(|w| w[0] >= w[1]));
        for (d, t) in d.variances().iter().zip(d.precisions()) {
            assert!((d * t - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn three_param_nests_two_param() {
        let lambda = laplace_eigenvalues(5, 6).unwrap();
        let a = DecayModel::new(lambda.clone(), DecayParams::Two { c: 1.0, alpha: 0.01 }).unwrap();
        let b = DecayModel::new(lambda, DecayParams::Three { c1: 1.0, c2: 0.0, alpha: 0.01 }).unwrap();
        assert_eq!(decay_diagonal(&a), decay_diagonal(&b));
    }

    #[test]
    fn decay_rejects_nonpositive_coefficients() {
        let lambda = laplace_eigenvalues(3, 3).unwrap();
        assert!(matches!(
            DecayModel::new(lambda.clone(), DecayParams::Two { c: 0.0, alpha: 0.0 }),
            Err(Error::NonPositiveVariance { .. })
        ));
        assert!(matches!(
            DecayModel::new(lambda.clone(), DecayParams::Three { c1: 1.0, c2: -1.0, alpha: 0.0 }),
            Err(Error::NonPositiveVariance { .. })
        ));
        assert!(DecayModel::new(vec![-1.0, 0.0], DecayParams::Two { c: 1.0, alpha: 0.0 }).is_err());
    }

    fn brute_force_vertical_pairs(m: usize, k: usize) -> usize {
        let mut count = 0;
        for a in 0..m * k {
            for b in 0..m * k {
                let (ra, ca) = (a % m, a / m);
                let (rb, cb) = (b % m, b / m);
                if ca == cb && ra.abs_diff(rb) == 1 {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn n4_structure_counts() {
        let s = gmrf_structure(10, 10, NeighborLevel::N4).unwrap();
        assert_eq!(s.num_params(), 3);
        assert_eq!(s.bases()[1].len(), brute_force_vertical_pairs(10, 10));
        assert_eq!(s.bases()[1].len(), 180);
        assert!(!s.bases()[1].contains(&(9, 10)));
        assert!(!s.bases()[1].contains(&(10, 9)));
    }

    #[test]
    fn structures_are_symmetric_and_disjoint() {
        for level in NeighborLevel::ALL {
            let s = gmrf_structure(4, 5, level).unwrap();
            assert_eq!(s.num_params(), level.num_params());
            assert!(s.bases()[0].iter().all(|&(a, b)| a == b));
            let mut seen = HashSet::new();
            for (j, basis) in s.bases().iter().enumerate() {
                assert!(!basis.is_empty());
                let set: HashSet<_> = basis.iter().copied().collect();
                for &(a, b) in basis {
                    assert!(set.contains(&(b, a)));
                    if j > 0 {
                        assert_ne!(a, b);
                    }
                    assert!(seen.insert((a, b)), "pair ({a},{b}) in two bases");
                }
            }
        }
    }

    #[test]
    fn smallest_n12_grid() {
        let s = gmrf_structure(3, 3, NeighborLevel::N12).unwrap();
        assert_eq!(s.num_params(), 7);
        assert!(s.bases().iter().all(|b| !b.is_empty()));
        assert!(matches!(
            gmrf_structure(2, 5, NeighborLevel::N4),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn assemble_identity_and_truth() {
        let s = gmrf_structure(10, 10, NeighborLevel::N4).unwrap();
        let p = precision_assemble(&s, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.values(), &DMatrix::identity(100, 100));
        let p = precision_assemble(&s, &[5.0, -0.2, 0.5]).unwrap();
        assert!(p.is_certified());
        let l = p.certificate().unwrap();
        let err = (l * l.transpose() - p.values()).abs().max();
        assert!(err < 1e-10 * 5.0);
        assert!(matches!(
            precision_assemble(&s, &[0.1, -0.2, 0.5]),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(precision_assemble(&s, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn spd_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SpdMatrix::new(m).is_err());
    }
}
