//! Command dispatch shared by the binary and the tests.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use super::config::parse_config;
use super::output::{emit_csv, emit_svg_plot, render_csv, render_svg, Series};
use crate::error::{Error, Result};
use crate::estimators::{fit_decay2, fit_decay3, fit_gmrf, sample_covariance, sufficient_stats};
use crate::fisher::{asymptotic_mse, decay_projected_cov, diag_projected_cov};
use crate::model::{
    decay_diagonal, gmrf_structure, precision_assemble, DecayFamily, DecayModel, DecayParams, NeighborLevel,
    SpdMatrix,
};
use crate::regularizers::{cond_reg_cv, ledoit_wolf};
use crate::simulation::{
    gaussian_sample, run_diag_experiment, run_gmrf_experiment, run_shrinkage_comparison, stream_seed, EstimatorTag,
    ExperimentConfig, ExperimentKind, ExperimentTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    SimulateDiag,
    SimulateGmrf,
    CompareShrinkage,
    FisherTrace,
    Estimate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateDiag => "simulate-diag",
            Command::SimulateGmrf => "simulate-gmrf",
            Command::CompareShrinkage => "compare-shrinkage",
            Command::FisherTrace => "fisher-trace",
            Command::Estimate => "estimate",
        }
    }

    fn accepts(self, kind: ExperimentKind) -> bool {
        match self {
            Command::SimulateDiag => kind == ExperimentKind::DiagDecay,
            Command::SimulateGmrf => kind == ExperimentKind::Gmrf,
            Command::CompareShrinkage => kind == ExperimentKind::ShrinkCompare,
            Command::FisherTrace => kind != ExperimentKind::Gmrf,
            Command::Estimate => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub format: OutputFormat,
}

/// `(1/N) Tr Q` of one model at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub model: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub trace_mse: f64,
}

pub const TRACE_HEADER: [&str; 3] = ["model", "N", "trace_mse"];

/// One fitted parameter of one estimator on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub parameter: String,
    pub value: f64,
}

pub const ESTIMATE_HEADER: [&str; 4] = ["estimator", "N", "parameter", "value"];

/// Asymptotic mean squared error of the diagonal, three- and two-parameter
/// models at the configured truth for every configured `N`. The
/// two-parameter row is omitted when the truth has `c2 != 0`.
pub fn fisher_trace_report(config: &ExperimentConfig) -> Result<Vec<TraceRow>> {
    if config.kind == ExperimentKind::Gmrf {
        return Err(Error::Validation("fisher-trace needs a spectral experiment kind".into()));
    }
    config.validate()?;
    let (m, k) = config.grid;
    let p = &config.truth_params;
    let (c1, c2, alpha) = match p.len() {
        2 => (p[0], 0.0, p[1]),
        _ => (p[0], p[1], p[2]),
    };
    let model3 = DecayModel::on_grid(m, k, DecayParams::Three { c1, c2, alpha })?;
    let mut models = vec![
        ("diag", diag_projected_cov(&decay_diagonal(&model3))),
        ("decay3", decay_projected_cov(&model3)?),
    ];
    if c2 == 0.0 {
        let model2 = DecayModel::on_grid(m, k, DecayParams::Two { c: c1, alpha })?;
        models.push(("decay2", decay_projected_cov(&model2)?));
    }
    let mut rows = Vec::new();
    for (name, q) in &models {
        for &n in &config.sample_sizes {
            rows.push(TraceRow {
                model: name.to_string(),
                n,
                trace_mse: asymptotic_mse(q, n),
            });
        }
    }
    Ok(rows)
}

fn truth_covariance(config: &ExperimentConfig) -> Result<SpdMatrix> {
    let (m, k) = config.grid;
    let p = &config.truth_params;
    match config.kind {
        ExperimentKind::Gmrf => {
            let level = match p.len() {
                3 => NeighborLevel::N4,
                5 => NeighborLevel::N8,
                _ => NeighborLevel::N12,
            };
            let prec = precision_assemble(&gmrf_structure(m, k, level)?, p)?;
            let inv = prec.into_values().cholesky().ok_or(Error::NotPositiveDefinite)?.inverse();
            SpdMatrix::certified((&inv + inv.transpose()) * 0.5)
        }
        _ => {
            let params = match p.len() {
                2 => DecayParams::from_slice(DecayFamily::TwoParam, p)?,
                _ => DecayParams::from_slice(DecayFamily::ThreeParam, p)?,
            };
            SpdMatrix::certified(decay_diagonal(&DecayModel::on_grid(m, k, params)?).to_matrix())
        }
    }
}

/// Parameter estimates on the first replication's sample at each `N`.
///
/// Parametric estimators report their fitted parameters, Ledoit–Wolf its
/// `gamma` and `target_scale`, the condition-number estimator its `kappa`
/// and `tau`. Nonparametric estimators have no parameters and are skipped.
/// Failed fits are returned separately as `(estimator, N, category)`.
pub fn estimate_report(config: &ExperimentConfig) -> Result<(Vec<EstimateRow>, Vec<(String, usize, String)>)> {
    config.validate()?;
    let truth = truth_covariance(config)?;
    let (m, k) = config.grid;
    let probe = DecayParams::Three { c1: 1.0, c2: 0.0, alpha: 0.0 };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in &config.sample_sizes {
        let key = stream_seed(config.seed, n, 0);
        let sample = gaussian_sample(&truth, n, key)?;
        for &tag in &config.estimator_set {
            let fitted: Result<Vec<(String, f64)>> = match tag {
                EstimatorTag::Sample | EstimatorTag::Diag | EstimatorTag::DiagMle => continue,
                EstimatorTag::Decay2 => {
                    let model = DecayModel::on_grid(m, k, DecayParams::Two { c: 1.0, alpha: 0.0 })?;
                    fit_decay2(&sufficient_stats(&sample), &model).map(|f| named(DecayFamily::TwoParam.labels(), &f.params))
                }
                EstimatorTag::Decay3 => {
                    let model = DecayModel::on_grid(m, k, probe)?;
                    fit_decay3(&sufficient_stats(&sample), &model, None)
                        .map(|f| named(DecayFamily::ThreeParam.labels(), &f.params))
                }
                EstimatorTag::LedoitWolf => {
                    ledoit_wolf(&sample).map(|r| vec![("gamma".into(), r.gamma), ("target_scale".into(), r.target_scale)])
                }
                EstimatorTag::CondReg => cond_reg_cv(&sample, &config.kappa_grid, config.cv_folds, key ^ 0x5eed)
                    .map(|r| vec![("kappa".into(), r.kappa), ("tau".into(), r.tau)]),
                EstimatorTag::GmrfN4 | EstimatorTag::GmrfN8 | EstimatorTag::GmrfN12 => {
                    let level = match tag {
                        EstimatorTag::GmrfN4 => NeighborLevel::N4,
                        EstimatorTag::GmrfN8 => NeighborLevel::N8,
                        _ => NeighborLevel::N12,
                    };
                    let s = gmrf_structure(m, k, level)?;
                    let labels = s.labels();
                    fit_gmrf(&sample_covariance(&sample), &s, None)
                        .map(|f| labels.into_iter().zip(f.params).collect())
                }
            };
            match fitted {
                Ok(values) => rows.extend(values.into_iter().map(|(parameter, value)| EstimateRow {
                    estimator: tag.as_str().into(),
                    n,
                    parameter,
                    value,
                })),
                Err(e) => failures.push((tag.as_str().to_string(), n, e.category().to_string())),
            }
        }
    }
    Ok((rows, failures))
}

fn named(labels: &[&str], values: &[f64]) -> Vec<(String, f64)> {
    labels.iter().map(|s| s.to_string()).zip(values.iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FailureLine<'a> {
    estimator: &'a str,
    #[serde(rename = "N")]
    n: usize,
    failures: usize,
    first_error: &'a str,
}

fn write(path: PathBuf, text: String, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

fn write_table(table: &ExperimentTable, stem: &str, cli: &CliConfig, written: &mut Vec<PathBuf>) -> Result<()> {
    let csv_path = cli.output_dir.join(format!("{stem}.csv"));
    emit_csv(table, &csv_path)?;
    written.push(csv_path);
    if !table.failures.is_empty() {
        let lines: Vec<FailureLine> = table
            .failures
            .iter()
            .map(|f| FailureLine {
                estimator: &f.estimator,
                n: f.n,
                failures: f.count,
                first_error: &f.first_error,
            })
            .collect();
        let text = render_csv(&["estimator", "N", "failures", "first_error"], &lines)?;
        write(cli.output_dir.join(format!("{stem}_failures.csv")), text, written)?;
    }
    if cli.format == OutputFormat::CsvSvg {
        let svg_path = cli.output_dir.join(format!("{stem}.svg"));
        emit_svg_plot(table, &svg_path)?;
        written.push(svg_path);
    }
    Ok(())
}

/// Loads the configuration, applies the seed override, and checks that
/// the experiment kind suits the command.
pub fn load_config(cli: &CliConfig) -> Result<ExperimentConfig> {
    let mut config = parse_config(&cli.config_path)?;
    if let Some(seed) = cli.seed_override {
        config.seed = seed;
    }
    if !cli.command.accepts(config.kind) {
        return Err(Error::Validation(format!(
            "command {} does not accept experiment kind {:?}",
            cli.command.name(),
            config.kind
        )));
    }
    Ok(config)
}

/// Runs one command and returns the paths it wrote, in order.
pub fn run(cli: &CliConfig) -> Result<Vec<PathBuf>> {
    let config = load_config(cli)?;
    ensure_dir(&cli.output_dir)?;
    let stem = cli.command.name();
    let mut written = Vec::new();
    match cli.command {
        Command::SimulateDiag => write_table(&run_diag_experiment(&config)?, stem, cli, &mut written)?,
        Command::SimulateGmrf => write_table(&run_gmrf_experiment(&config)?, stem, cli, &mut written)?,
        Command::CompareShrinkage => write_table(&run_shrinkage_comparison(&config)?, stem, cli, &mut written)?,
        Command::FisherTrace => {
            let rows = fisher_trace_report(&config)?;
            write(cli.output_dir.join(format!("{stem}.csv")), render_csv(&TRACE_HEADER, &rows)?, &mut written)?;
            if cli.format == OutputFormat::CsvSvg {
                let mut series: Vec<Series> = Vec::new();
                for r in &rows {
                    match series.last_mut() {
                        Some(s) if s.name == r.model => s.points.push((r.n as f64, r.trace_mse)),
                        _ => series.push(Series {
                            name: r.model.clone(),
                            points: vec![(r.n as f64, r.trace_mse)],
                        }),
                    }
                }
                let svg = render_svg(&series, "asymptotic mean squared error (1/N) Tr Q")?;
                write(cli.output_dir.join(format!("{stem}.svg")), svg, &mut written)?;
            }
        }
        Command::Estimate => {
            let (rows, failures) = estimate_report(&config)?;
            write(cli.output_dir.join(format!("{stem}.csv")), render_csv(&ESTIMATE_HEADER, &rows)?, &mut written)?;
            if !failures.is_empty() {
                let lines: Vec<FailureLine> = failures
                    .iter()
                    .map(|(e, n, c)| FailureLine {
                        estimator: e,
                        n: *n,
                        failures: 1,
                        first_error: c,
                    })
                    .collect();
                let text = render_csv(&["estimator", "N", "failures", "first_error"], &lines)?;
                write(cli.output_dir.join(format!("{stem}_failures.csv")), text, &mut written)?;
            }
        }
    }
    Ok(written)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
