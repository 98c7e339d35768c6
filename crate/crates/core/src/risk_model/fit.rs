//! Maximum-likelihood logistic regression by iteratively reweighted least
//! squares (Newton's method on the Bernoulli log-likelihood) with step-halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{COLUMNS, N_COLUMNS};
use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once the largest absolute coefficient change falls below this.
    pub tolerance: f64,
    /// Ridge penalty λ·|a|²/2; off unless separation forces it.
    pub ridge: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8, ridge: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// The likelihood keeps increasing as coefficients grow without bound.
    Separated,
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    /// Inverse Fisher information at the returned coefficients.
    pub covariance: DMatrix<f64>,
    pub standard_errors: DVector<f64>,
    /// Log-likelihood (penalized when a ridge term is active).
    pub log_likelihood: f64,
    pub iterations: usize,
    pub status: FitStatus,
    pub ridge: Option<f64>,
    /// Objective after each accepted step, starting at the zero vector.
    pub trace: Vec<f64>,
    /// σ(Xa) at the returned coefficients.
    pub fitted: Vec<f64>,
}

impl LogisticFit {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood Σ y·η − ln(1 + e^η).
pub fn log_likelihood(x: &DMatrix<f64>, y: &[u8], coefficients: &DVector<f64>) -> f64 {
    let eta = x * coefficients;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| if yi == 1 { -softplus(-e) } else { -softplus(e) })
        .sum()
}

/// Xᵀ(y − σ(Xa)).
pub fn log_likelihood_gradient(x: &DMatrix<f64>, y: &[u8], coefficients: &DVector<f64>) -> DVector<f64> {
    let eta = x * coefficients;
    let resid = DVector::from_iterator(y.len(), eta.iter().zip(y).map(|(&e, &yi)| yi as f64 - sigmoid(e)));
    x.transpose() * resid
}

fn objective(x: &DMatrix<f64>, y: &[u8], a: &DVector<f64>, ridge: f64) -> f64 {
    log_likelihood(x, y, a) - 0.5 * ridge * a.norm_squared()
}

fn column_name(j: usize, ncols: usize) -> String {
    if ncols == N_COLUMNS {
        COLUMNS[j].to_string()
    } else {
        format!("x{j}")
    }
}

/// Columns that are zero or linear combinations of earlier ones.
fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        // two passes of modified Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r -= q * proj;
            }
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            dependent.push(j);
        } else {
            basis.push(r / rn);
        }
    }
    dependent
}

/// Linear predictor magnitude beyond which fitted probabilities are 0 or 1 to
/// double precision.
const SEPARATION_ETA: f64 = 30.0;
const MAX_HALVINGS: usize = 50;

pub fn fit_logistic(x: &DMatrix<f64>, y: &[u8], options: &FitOptions) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(ModelError::LengthMismatch { rows: n, labels: y.len() });
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(ModelError::InvalidLabel(*bad));
    }
    for class in [0u8, 1] {
        if !y.contains(&class) {
            return Err(ModelError::MissingClass(class));
        }
    }
    if n < p {
        return Err(ModelError::TooFewRows { rows: n, columns: p });
    }
    let ridge = options.ridge.unwrap_or(0.0);
    if ridge == 0.0 {
        let dependent = dependent_columns(x);
        if !dependent.is_empty() {
            return Err(ModelError::Singular { columns: dependent.iter().map(|&j| column_name(j, p)).collect() });
        }
    }

    let xt = x.transpose();
    let yv = DVector::from_iterator(n, y.iter().map(|&v| v as f64));
    let mut a = DVector::zeros(p);
    let mut obj = objective(x, y, &a, ridge);
    let mut trace = vec![obj];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let eta = x * &a;
        let prob = eta.map(sigmoid);
        let grad = &xt * (&yv - &prob) - &a * ridge;
        let info = information(x, &prob, ridge);
        let Some(chol) = info.cholesky() else {
            status = FitStatus::Separated;
            break;
        };
        let step = chol.solve(&grad);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &a + &step * scale;
            let cand_obj = objective(x, y, &candidate, ridge);
            if cand_obj >= obj {
                accepted = Some((candidate, cand_obj));
                break;
            }
            scale *= 0.5;
        }
        // No non-decreasing step left: we are at the optimum to working precision.
        let Some((next, next_obj)) = accepted else {
            status = FitStatus::Converged;
            break;
        };
        let change = (&next - &a).amax();
        a = next;
        obj = next_obj;
        trace.push(obj);
        if change < options.tolerance {
            status = FitStatus::Converged;
            break;
        }
        if ridge == 0.0 && (x * &a).amax() > SEPARATION_ETA && y_is_separated(x, y, &a) {
            status = FitStatus::Separated;
            break;
        }
    }
    if status == FitStatus::MaxIterations && ridge == 0.0 && (x * &a).amax() > SEPARATION_ETA {
        status = FitStatus::Separated;
    }

    let fitted: Vec<f64> = (x * &a).iter().map(|&e| sigmoid(e)).collect();
    let prob = DVector::from_column_slice(&fitted);
    let covariance = information(x, &prob, ridge)
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(p, p, f64::NAN));
    let standard_errors = DVector::from_iterator(p, (0..p).map(|j| covariance[(j, j)].sqrt()));

    Ok(LogisticFit {
        coefficients: a,
        covariance,
        standard_errors,
        log_likelihood: obj,
        iterations,
        status,
        ridge: options.ridge,
        trace,
        fitted,
    })
}

/// Every row sits on the side of the decision boundary its label asks for,
/// with at least one row pinned at probability 0 or 1.
fn y_is_separated(x: &DMatrix<f64>, y: &[u8], a: &DVector<f64>) -> bool {
    let eta = x * a;
    eta.iter().zip(y).all(|(&e, &yi)| (yi == 1 && e >= 0.0) || (yi == 0 && e <= 0.0))
}

/// XᵀWX + λI with W = diag(p(1−p)).
fn information(x: &DMatrix<f64>, prob: &DVector<f64>, ridge: f64) -> DMatrix<f64> {
    let p = x.ncols();
    let mut weighted = x.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        let w = prob[i] * (1.0 - prob[i]);
        row *= w;
    }
    let mut info = x.transpose() * weighted;
    for j in 0..p {
        info[(j, j)] += ridge;
    }
    info
}
