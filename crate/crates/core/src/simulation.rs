//! Seeded Gaussian sampling and the Monte Carlo experiments comparing
//! nested estimators by squared Frobenius error.
//!
//! Replication `r` at sample size `N` draws from its own stream keyed by
//! `(seed, N, r)`, so tables do not depend on evaluation order, thread
//! count, or which estimators are enabled.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{diagonal_mle, fit_decay2, fit_decay3, fit_gmrf, sample_covariance, sufficient_stats, FitReport};
use crate::model::{
    decay_diagonal, gmrf_structure, precision_assemble, DecayFamily, DecayModel, DecayParams, NeighborLevel,
    SampleSet, SpdMatrix,
};
use crate::regularizers::{cond_reg_cv, ledoit_wolf, DEFAULT_FOLDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DiagDecay,
    Gmrf,
    ShrinkCompare,
}

/// Estimators that can appear in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    /// Full sample covariance.
    Sample,
    /// Diagonal part of the sample covariance.
    Diag,
    /// Unrestricted diagonal MLE (numerically equal to `Diag`).
    DiagMle,
    Decay3,
    Decay2,
    LedoitWolf,
    CondReg,
    GmrfN4,
    GmrfN8,
    GmrfN12,
}

impl EstimatorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Sample => "sample",
            EstimatorTag::Diag => "diag",
            EstimatorTag::DiagMle => "diag_mle",
            EstimatorTag::Decay3 => "decay3",
            EstimatorTag::Decay2 => "decay2",
            EstimatorTag::LedoitWolf => "ledoit_wolf",
            EstimatorTag::CondReg => "cond_reg",
            EstimatorTag::GmrfN4 => "gmrf_n4",
            EstimatorTag::GmrfN8 => "gmrf_n8",
            EstimatorTag::GmrfN12 => "gmrf_n12",
        }
    }

    fn gmrf_level(self) -> Option<NeighborLevel> {
        match self {
            EstimatorTag::GmrfN4 => Some(NeighborLevel::N4),
            EstimatorTag::GmrfN8 => Some(NeighborLevel::N8),
            EstimatorTag::GmrfN12 => Some(NeighborLevel::N12),
            _ => None,
        }
    }

    fn allowed_in(self, kind: ExperimentKind) -> bool {
        match kind {
            ExperimentKind::Gmrf => self == EstimatorTag::Sample || self.gmrf_level().is_some(),
            _ => self.gmrf_level().is_none(),
        }
    }
}

impl ExperimentKind {
    pub fn default_estimators(self) -> Vec<EstimatorTag> {
        use EstimatorTag::*;
        match self {
            ExperimentKind::DiagDecay => vec![Sample, Diag, DiagMle, Decay3, Decay2],
            ExperimentKind::Gmrf => vec![Sample, GmrfN4, GmrfN8, GmrfN12],
            ExperimentKind::ShrinkCompare => vec![Sample, Diag, Decay2, LedoitWolf, CondReg],
        }
    }

    pub fn default_truth(self) -> Vec<f64> {
        match self {
            ExperimentKind::Gmrf => vec![5.0, -0.2, 0.5],
            _ => vec![30.0, 0.002],
        }
    }

    pub fn default_sample_sizes(self) -> Vec<usize> {
        match self {
            ExperimentKind::Gmrf => (10..=55).step_by(5).collect(),
            _ => vec![5, 10, 15, 20],
        }
    }
}

/// Default bound grid for the condition-number estimator.
pub const DEFAULT_KAPPA_GRID: [f64; 8] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Grid rows and columns; the state dimension is their product.
    pub grid: (usize, usize),
    /// `(c, alpha)` or `(c1, c2, alpha)` for the spectral experiments, the
    /// precision coefficients (3, 5 or 7 of them) for the GMRF experiment.
    pub truth_params: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub estimator_set: Vec<EstimatorTag>,
    pub cv_folds: usize,
    pub kappa_grid: Vec<f64>,
    /// Also report `|P_hat - P|_F^2` rows for the GMRF fits.
    pub precision_errors: bool,
}

impl ExperimentConfig {
    /// Configuration with every optional field at its default.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            grid: (10, 10),
            truth_params: kind.default_truth(),
            sample_sizes: kind.default_sample_sizes(),
            replications: 50,
            seed: 0,
            estimator_set: kind.default_estimators(),
            cv_folds: DEFAULT_FOLDS,
            kappa_grid: DEFAULT_KAPPA_GRID.to_vec(),
            precision_errors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.replications < 1 {
            return fail("replications must be at least 1".into());
        }
        if self.sample_sizes.is_empty() {
            return fail("sample_sizes must be non-empty".into());
        }
        if self.sample_sizes[0] < 1 || self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return fail("sample_sizes must be positive and strictly increasing".into());
        }
        if self.grid.0 < 1 || self.grid.1 < 1 {
            return fail("grid must have at least one row and column".into());
        }
        if self.estimator_set.is_empty() {
            return fail("estimators must be non-empty".into());
        }
        if let Some(t) = self.estimator_set.iter().find(|t| !t.allowed_in(self.kind)) {
            return fail(format!("estimator {} is not available for this kind", t.as_str()));
        }
        let mut seen = self.estimator_set.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return fail("estimators must not repeat".into());
        }
        if self.truth_params.iter().any(|v| !v.is_finite()) {
            return fail("truth parameters must be finite".into());
        }
        match self.kind {
            ExperimentKind::Gmrf => {
                if !matches!(self.truth_params.len(), 3 | 5 | 7) {
                    return fail("gmrf truth needs 3, 5 or 7 coefficients".into());
                }
                if self.grid.0 < 3 || self.grid.1 < 3 {
                    return fail("gmrf grid must be at least 3x3".into());
                }
            }
            _ => {
                if !matches!(self.truth_params.len(), 2 | 3) {
                    return fail("decay truth needs (c, alpha) or (c1, c2, alpha)".into());
                }
            }
        }
        if self.cv_folds < 2 {
            return fail("cv_folds must be at least 2".into());
        }
        if self.kappa_grid.is_empty() || self.kappa_grid.iter().any(|k| !(*k >= 1.0)) {
            return fail("kappa_grid must be non-empty with entries >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub estimator: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_sq_frobenius: f64,
    pub std_error: f64,
    /// Successful replications entering the mean.
    pub replications: usize,
}

/// Replications of one `(estimator, N)` cell whose fit failed.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRecord {
    pub estimator: String,
    pub n: usize,
    pub count: usize,
    /// Category of the first failure.
    pub first_error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
    pub failures: Vec<FailureRecord>,
}

impl ExperimentTable {
    pub fn row(&self, estimator: &str, n: usize) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n)
    }

    pub fn estimators(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.estimator.as_str()) {
                v.push(&r.estimator);
            }
        }
        v
    }
}

/// Stream key of replication `r` at sample size `n`.
pub fn stream_seed(seed: u64, n: usize, r: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ n as u64) ^ r as u64)
}

/// `N` draws from `N(0, cov)` as `L Z`, with `Z` filled column by column
/// from a ChaCha stream keyed by `stream_seed`.
pub fn gaussian_sample(cov: &SpdMatrix, n_samples: usize, stream_seed: u64) -> Result<SampleSet> {
    let l = cov.certificate().ok_or(Error::NotPositiveDefinite)?;
    let n = cov.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let z: Vec<f64> = (0..n * n_samples).map(|_| StandardNormal.sample(&mut rng)).collect();
    let z = DMatrix::from_vec(n, n_samples, z);
    SampleSet::new(l * z, Some(stream_seed))
}

/// Squared Frobenius norm of `estimate - truth`.
pub fn frobenius_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", truth.shape()),
            actual: format!("{:?}", estimate.shape()),
        });
    }
    Ok(estimate.iter().zip(truth.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean and standard error (sample standard deviation over `sqrt(count)`;
/// zero for a single value).
pub fn aggregate(errors: &[f64]) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    if errors.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Per-estimator error, or the category of the failure.
type Outcome = Vec<(String, std::result::Result<f64, &'static str>)>;

/// Runs every `(N, r)` task in parallel and reduces in `(N, r)` order.
fn run_replications<F>(config: &ExperimentConfig, truth: &SpdMatrix, evaluate: F) -> Result<ExperimentTable>
where
    F: Fn(&SampleSet, u64) -> Outcome + Sync,
{
    let tasks: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<Result<Outcome>> = tasks
        .par_iter()
        .map(|&(n, r)| {
            let key = stream_seed(config.seed, n, r);
            let sample = gaussian_sample(truth, n, key)?;
            Ok(evaluate(&sample, key))
        })
        .collect();

    struct Cell {
        tag: String,
        n: usize,
        values: Vec<f64>,
        failures: usize,
        first_error: Option<String>,
    }
    let mut cells: Vec<Cell> = Vec::new();
    for (&(n, _), outcome) in tasks.iter().zip(outcomes) {
        for (tag, value) in outcome? {
            let idx = match cells.iter().position(|c| c.tag == tag && c.n == n) {
                Some(i) => i,
                None => {
                    cells.push(Cell {
                        tag,
                        n,
                        values: Vec::new(),
                        failures: 0,
                        first_error: None,
                    });
                    cells.len() - 1
                }
            };
            let cell = &mut cells[idx];
            match value {
                Ok(v) => cell.values.push(v),
                Err(e) => {
                    cell.failures += 1;
                    cell.first_error.get_or_insert_with(|| e.to_string());
                }
            }
        }
    }
    let mut table = ExperimentTable::default();
    for c in cells {
        if let Ok((mean, se)) = aggregate(&c.values) {
            table.rows.push(TableRow {
                estimator: c.tag.clone(),
                n: c.n,
                mean_sq_frobenius: mean,
                std_error: se,
                replications: c.values.len(),
            });
        }
        if c.failures > 0 {
            table.failures.push(FailureRecord {
                estimator: c.tag,
                n: c.n,
                count: c.failures,
                first_error: c.first_error.unwrap_or_default(),
            });
        }
    }
    Ok(table)
}

fn converged(fit: Result<FitReport>) -> Result<FitReport> {
    let fit = fit?;
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged {
            iterations: fit.iterations,
            residual: fit.residual_norm,
        })
    }
}

fn squared_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Spectral-domain experiment shared by the nesting and shrinkage comparisons.
fn run_spectral(config: &ExperimentConfig) -> Result<ExperimentTable> {
    config.validate()?;
    let (m, k) = config.grid;
    let truth_params = match config.truth_params.len() {
        2 => DecayParams::from_slice(DecayFamily::TwoParam, &config.truth_params)?,
        _ => DecayParams::from_slice(DecayFamily::ThreeParam, &config.truth_params)?,
    };
    let (c1, c2, alpha) = truth_params.as_three();
    let model2 = DecayModel::on_grid(m, k, DecayParams::Two { c: c1 + c2, alpha })?;
    let model3 = DecayModel::on_grid(m, k, DecayParams::Three { c1, c2, alpha })?;
    let truth_model = model3.with_params(truth_params)?;
    let d = decay_diagonal(&truth_model);
    let d_true = d.variances().to_vec();
    let truth = SpdMatrix::certified(d.to_matrix())?;

    let evaluate = |sample: &SampleSet, key: u64| -> Outcome {
        let stats = sufficient_stats(sample);
        let needs_cov = config
            .estimator_set
            .iter()
            .any(|t| matches!(t, EstimatorTag::Sample | EstimatorTag::Diag));
        let cov = needs_cov.then(|| sample_covariance(sample));
        let vs_truth = |est: &DMatrix<f64>| frobenius_error(est, truth.values());
        config
            .estimator_set
            .iter()
            .map(|&tag| {
                let err = match tag {
                    EstimatorTag::Sample => vs_truth(cov.as_ref().expect("computed above")),
                    EstimatorTag::Diag => {
                        let c = cov.as_ref().expect("computed above");
                        let diag: Vec<f64> = c.diagonal().iter().copied().collect();
                        Ok(squared_diff(&diag, &d_true))
                    }
                    EstimatorTag::DiagMle => diagonal_mle(&stats).map(|e| squared_diff(e.variances(), &d_true)),
                    EstimatorTag::Decay3 => converged(fit_decay3(&stats, &model3, None)).and_then(|f| {
                        let m = model3.with_params(DecayParams::from_slice(DecayFamily::ThreeParam, &f.params)?)?;
                        Ok(squared_diff(decay_diagonal(&m).variances(), &d_true))
                    }),
                    EstimatorTag::Decay2 => converged(fit_decay2(&stats, &model2)).and_then(|f| {
                        let m = model2.with_params(DecayParams::from_slice(DecayFamily::TwoParam, &f.params)?)?;
                        Ok(squared_diff(decay_diagonal(&m).variances(), &d_true))
                    }),
                    EstimatorTag::LedoitWolf => ledoit_wolf(sample).and_then(|r| vs_truth(r.estimate.values())),
                    EstimatorTag::CondReg => cond_reg_cv(sample, &config.kappa_grid, config.cv_folds, key ^ 0x5eed)
                        .and_then(|r| vs_truth(r.estimate.values())),
                    _ => unreachable!("rejected by validate"),
                };
                (tag.as_str().to_string(), err.map_err(|e| e.category()))
            })
            .collect()
    };
    run_replications(config, &truth, evaluate)
}

/// Nested spectral estimators against a decay-model truth.
pub fn run_diag_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    if config.kind != ExperimentKind::DiagDecay {
        return Err(Error::Validation("run_diag_experiment needs kind diag_decay".into()));
    }
    run_spectral(config)
}

/// Regularized baselines in the same setting as [`run_diag_experiment`].
pub fn run_shrinkage_comparison(config: &ExperimentConfig) -> Result<ExperimentTable> {
    if config.kind != ExperimentKind::ShrinkCompare {
        return Err(Error::Validation("run_shrinkage_comparison needs kind shrink_compare".into()));
    }
    run_spectral(config)
}

/// Nested banded-precision fits against a GMRF truth, errors measured on
/// covariance matrices (and optionally on precisions).
pub fn run_gmrf_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    if config.kind != ExperimentKind::Gmrf {
        return Err(Error::Validation("run_gmrf_experiment needs kind gmrf".into()));
    }
    config.validate()?;
    let (m, k) = config.grid;
    let truth_level = match config.truth_params.len() {
        3 => NeighborLevel::N4,
        5 => NeighborLevel::N8,
        _ => NeighborLevel::N12,
    };
    let truth_prec = precision_assemble(&gmrf_structure(m, k, truth_level)?, &config.truth_params)?;
    let truth_cov = invert_spd(&truth_prec)?;
    let structures = config
        .estimator_set
        .iter()
        .filter_map(|t| t.gmrf_level())
        .map(|level| gmrf_structure(m, k, level))
        .collect::<Result<Vec<_>>>()?;

    let evaluate = |sample: &SampleSet, _key: u64| -> Outcome {
        let cov = sample_covariance(sample);
        let mut out = Vec::new();
        let mut fits = structures.iter();
        for &tag in &config.estimator_set {
            if tag == EstimatorTag::Sample {
                let err = frobenius_error(&cov, truth_cov.values()).map_err(|e| e.category());
                out.push((tag.as_str().to_string(), err));
                continue;
            }
            let structure = fits.next().expect("one structure per gmrf tag");
            let fitted = converged(fit_gmrf(&cov, structure, None))
                .and_then(|f| precision_assemble(structure, &f.params))
                .map_err(|e| e.category());
            let cov_err = fitted.as_ref().map_err(|e| *e).and_then(|p| {
                invert_spd(p)
                    .and_then(|c| frobenius_error(c.values(), truth_cov.values()))
                    .map_err(|e| e.category())
            });
            out.push((tag.as_str().to_string(), cov_err));
            if config.precision_errors {
                let prec_err = fitted
                    .and_then(|p| frobenius_error(p.values(), truth_prec.values()).map_err(|e| e.category()));
                out.push((format!("{}_precision", tag.as_str()), prec_err));
            }
        }
        out
    };
    run_replications(config, &truth_cov, evaluate)
}

fn invert_spd(p: &SpdMatrix) -> Result<SpdMatrix> {
    let l = p.certificate().ok_or(Error::NotPositiveDefinite)?;
    let inv = nalgebra::Cholesky::pack_dirty(l.clone()).inverse();
    SpdMatrix::certified((&inv + inv.transpose()) * 0.5)
}
