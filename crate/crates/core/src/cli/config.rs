//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "kind": "diag_decay",
//!   "grid": { "rows": 10, "cols": 10 },
//!   "truth": { "c": 30, "alpha": 0.002 },
//!   "sample_sizes": [5, 10, 15, 20],
//!   "replications": 50,
//!   "seed": 1,
//!   "estimators": ["sample", "diag", "diag_mle", "decay3", "decay2"]
//! }
//! ```
//!
//! Only `kind` is required. The spectral kinds take a truth of either
//! `{c, alpha}` or `{c1, c2, alpha}`; `gmrf` takes `{theta: [..]}`.
//! Optional extras: `cv_folds`, `kappa_grid`, `precision_errors`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::{EstimatorTag, ExperimentConfig, ExperimentKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<TruthDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    estimators: Option<Vec<EstimatorTag>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cv_folds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    precision_errors: Option<bool>,
}

fn truth_params(kind: ExperimentKind, t: &TruthDoc) -> Result<Vec<f64>> {
    let bad = |m: &str| Err(Error::Validation(format!("truth: {m}")));
    match kind {
        ExperimentKind::Gmrf => match t {
            TruthDoc { theta: Some(th), c: None, c1: None, c2: None, alpha: None } => Ok(th.clone()),
            _ => bad("gmrf truth takes only `theta`"),
        },
        _ => match t {
            TruthDoc { c: Some(c), c1: None, c2: None, alpha: Some(a), theta: None } => Ok(vec![*c, *a]),
            TruthDoc { c: None, c1: Some(c1), c2: Some(c2), alpha: Some(a), theta: None } => Ok(vec![*c1, *c2, *a]),
            _ => bad("decay truth takes `c, alpha` or `c1, c2, alpha`"),
        },
    }
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut config = ExperimentConfig::new(doc.kind);
    if let Some(g) = doc.grid {
        config.grid = (g.rows, g.cols);
    }
    if let Some(t) = &doc.truth {
        config.truth_params = truth_params(doc.kind, t)?;
    }
    if let Some(v) = doc.sample_sizes {
        config.sample_sizes = v;
    }
    if let Some(v) = doc.replications {
        config.replications = v;
    }
    if let Some(v) = doc.seed {
        config.seed = v;
    }
    if let Some(v) = doc.estimators {
        config.estimator_set = v;
    }
    if let Some(v) = doc.cv_folds {
        config.cv_folds = v;
    }
    if let Some(v) = doc.kappa_grid {
        config.kappa_grid = v;
    }
    if let Some(v) = doc.precision_errors {
        config.precision_errors = v;
    }
    config.validate()?;
    Ok(config)
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

/// Serializes a configuration with every field explicit.
pub fn config_to_json(config: &ExperimentConfig) -> String {
    let p = &config.truth_params;
    let truth = match (config.kind, p.len()) {
        (ExperimentKind::Gmrf, _) => TruthDoc { theta: Some(p.clone()), ..Default::default() },
        (_, 2) => TruthDoc { c: Some(p[0]), alpha: Some(p[1]), ..Default::default() },
        _ => TruthDoc {
            c1: p.first().copied(),
            c2: p.get(1).copied(),
            alpha: p.get(2).copied(),
            ..Default::default()
        },
    };
    let doc = ConfigDoc {
        kind: config.kind,
        grid: Some(GridDoc { rows: config.grid.0, cols: config.grid.1 }),
        truth: Some(truth),
        sample_sizes: Some(config.sample_sizes.clone()),
        replications: Some(config.replications),
        seed: Some(config.seed),
        estimators: Some(config.estimator_set.clone()),
        cv_folds: Some(config.cv_folds),
        kappa_grid: Some(config.kappa_grid.clone()),
        precision_errors: Some(config.precision_errors),
    };
    serde_json::to_string_pretty(&doc).expect("config documents always serialize")
}
