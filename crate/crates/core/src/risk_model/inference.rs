use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use super::{FittedModel, ModelError, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// Significance level below which a coefficient difference counts as detected.
pub const DIFFERENCE_ALPHA: f64 = 0.05;

/// P(|Z| ≥ |z|) for a standard normal Z.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// |z| whose two-sided tail probability is `p`.
pub fn z_for_two_sided_p(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(1.0 - p / 2.0)
}

/// `num / den` with 0/0 read as 0.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub column: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub z: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn wald_table(model: &FittedModel) -> Vec<WaldRow> {
    model
        .columns
        .iter()
        .zip(model.coefficients.iter().zip(&model.standard_errors))
        .map(|(column, (&estimate, &se))| {
            let z = ratio(estimate, se);
            WaldRow {
                column: column.clone(),
                estimate,
                standard_error: se,
                z,
                p: two_sided_p(z),
                ci_low: estimate - Z_95 * se,
                ci_high: estimate + Z_95 * se,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiOverlap {
    pub column: String,
    pub first: (f64, f64),
    pub second: (f64, f64),
    pub overlapping: bool,
}

/// Whether the two models' 95% intervals intersect, column by column.
pub fn ci_overlap(m1: &FittedModel, m2: &FittedModel) -> Result<Vec<CiOverlap>> {
    check_layout(m1, m2)?;
    Ok(wald_table(m1)
        .into_iter()
        .zip(wald_table(m2))
        .map(|(a, b)| CiOverlap {
            overlapping: a.ci_low <= b.ci_high && b.ci_low <= a.ci_high,
            column: a.column,
            first: (a.ci_low, a.ci_high),
            second: (b.ci_low, b.ci_high),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDifference {
    pub column: String,
    pub difference: f64,
    pub z: f64,
    pub p: f64,
    /// `false` reads as "no detectable difference" at the 5% level.
    pub detectable: bool,
}

impl CoefficientDifference {
    pub fn verdict(&self) -> &'static str {
        if self.detectable {
            "different"
        } else {
            "no detectable difference"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientComparison {
    pub first: String,
    pub second: String,
    pub rows: Vec<CoefficientDifference>,
}

/// z = (a1 − a2) / sqrt(SE1² + SE2²) per column, with two-sided p-values.
pub fn compare_models(m1: &FittedModel, m2: &FittedModel) -> Result<CoefficientComparison> {
    check_layout(m1, m2)?;
    let rows = (0..m1.columns.len())
        .map(|j| {
            let difference = m1.coefficients[j] - m2.coefficients[j];
            let se = (m1.standard_errors[j].powi(2) + m2.standard_errors[j].powi(2)).sqrt();
            let z = ratio(difference, se);
            let p = two_sided_p(z);
            CoefficientDifference { column: m1.columns[j].clone(), difference, z, p, detectable: p < DIFFERENCE_ALPHA }
        })
        .collect();
    Ok(CoefficientComparison { first: m1.city.clone(), second: m2.city.clone(), rows })
}

fn check_layout(m1: &FittedModel, m2: &FittedModel) -> Result<()> {
    if m1.columns != m2.columns {
        return Err(ModelError::ColumnMismatch { expected: m1.columns.clone(), got: m2.columns.clone() });
    }
    Ok(())
}
