//! Logistic severity model: design matrix with interaction terms, fitting,
//! prediction and cross-model inference.

mod design;
mod fit;
mod inference;

use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use design::{
    build_design, design_row, identity_scaling, read_design_csv, write_design_csv, ColumnScaling, Design, Scaling,
    ScalingMetadata, COLUMNS, CONTINUOUS, N_COLUMNS,
};
pub use fit::{fit_logistic, log_likelihood, log_likelihood_gradient, sigmoid, FitOptions, FitStatus, LogisticFit};
pub use inference::{
    ci_overlap, compare_models, two_sided_p, wald_table, z_for_two_sided_p, CiOverlap, CoefficientComparison,
    CoefficientDifference, WaldRow, DIFFERENCE_ALPHA, Z_95,
};

use crate::street_graph::SegmentFeatures;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("design has no rows")]
    EmptyDesign,
    #[error("no scaling metadata for column `{0}`")]
    MissingScaling(String),
    #[error("{rows} design rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("labels must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("no rows with label {0}")]
    MissingClass(u8),
    #[error("{rows} rows cannot identify {columns} coefficients")]
    TooFewRows { rows: usize, columns: usize },
    #[error("singular information matrix; dependent columns: {}", columns.join(", "))]
    Singular { columns: Vec<String> },
    #[error("column layout mismatch: expected {expected:?}, got {got:?}")]
    ColumnMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("design csv: {0}")]
    BadCsv(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainWindow {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

/// A fitted city model as stored on disk. Field names and order are the model
/// file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub city: String,
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Row-major, `columns.len()²` entries.
    pub covariance: Vec<f64>,
    pub scaling: ScalingMetadata,
    pub train_window: Option<TrainWindow>,
    pub n_train: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

impl FittedModel {
    pub fn from_fit(
        city: impl Into<String>,
        fit: &LogisticFit,
        scaling: ScalingMetadata,
        train_window: Option<TrainWindow>,
        n_train: usize,
    ) -> Self {
        let p = fit.coefficients.len();
        let covariance = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|ij| fit.covariance[ij]).collect();
        Self {
            city: city.into(),
            columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
            coefficients: fit.coefficients.iter().copied().collect(),
            standard_errors: fit.standard_errors.iter().copied().collect(),
            covariance,
            scaling,
            train_window,
            n_train,
            converged: fit.converged(),
            log_likelihood: fit.log_likelihood,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check_columns(&self) -> Result<()> {
        if self.columns.iter().map(String::as_str).ne(COLUMNS) || self.coefficients.len() != N_COLUMNS {
            return Err(ModelError::ColumnMismatch {
                expected: COLUMNS.iter().map(|c| c.to_string()).collect(),
                got: self.columns.clone(),
            });
        }
        Ok(())
    }

    pub fn covariance_entry(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.columns.len() + j]
    }

    /// σ(aᵀx) for a row that is already in design space.
    pub fn risk_for_row(&self, row: &[f64]) -> f64 {
        sigmoid(row.iter().zip(&self.coefficients).map(|(x, a)| x * a).sum())
    }

    /// Probability that an accident at a location with these features is severe.
    pub fn predict_risk(&self, features: &SegmentFeatures) -> Result<f64> {
        let row = design_row(features, &self.scaling)?;
        Ok(self.risk_for_row(&row))
    }

    pub fn predict_safety(&self, features: &SegmentFeatures) -> Result<f64> {
        Ok(1.0 - self.predict_risk(features)?)
    }

    pub fn coefficient_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }
}

/// Standardizes, fits and packages a model in one go.
pub fn fit_model(
    city: &str,
    features: &[SegmentFeatures],
    labels: &[u8],
    train_window: Option<TrainWindow>,
    options: &FitOptions,
) -> Result<(FittedModel, LogisticFit, Design)> {
    let design = build_design(features, Scaling::Fit)?;
    let fit = fit_logistic(&design.matrix, labels, options)?;
    let model = FittedModel::from_fit(city, &fit, design.scaling.clone(), train_window, labels.len());
    Ok((model, fit, design))
}
