//! Held-out scoring: accuracy, Brier score against a climatology reference,
//! Brier skill score and reliability curves.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk_model::{build_design, FittedModel, ModelError, Scaling};
use crate::street_graph::SegmentFeatures;

pub const N_BINS: usize = 10;
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{probs} predictions but {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("no predictions to score")]
    Empty,
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("reference Brier score is 0; skill score is undefined")]
    UndefinedSkill,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch { probs: probs.len(), labels: labels.len() });
    }
    if probs.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(EvalError::InvalidProbability(p));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(EvalError::InvalidLabel(y));
    }
    Ok(())
}

/// Mean squared difference between predicted probabilities and outcomes.
pub fn brier_score(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check(probs, labels)?;
    let sum: f64 = probs.iter().zip(labels).map(|(p, &y)| (p - y as f64).powi(2)).sum();
    Ok(sum / probs.len() as f64)
}

pub fn base_rate(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(labels.iter().map(|&y| y as f64).sum::<f64>() / labels.len() as f64)
}

/// Brier score of always predicting the training base rate.
pub fn climatology_brier(train_labels: &[u8], test_labels: &[u8]) -> Result<f64> {
    let p = base_rate(train_labels)?;
    brier_score(&vec![p; test_labels.len()], test_labels)
}

pub fn brier_skill_score(bs: f64, bs_ref: f64) -> Result<f64> {
    if bs_ref == 0.0 {
        return Err(EvalError::UndefinedSkill);
    }
    Ok(1.0 - bs / bs_ref)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// `None` when the bin is empty.
    pub mean_pred: Option<f64>,
    pub observed_frac: Option<f64>,
}

fn bin_index(p: f64) -> usize {
    ((p * N_BINS as f64) as usize).min(N_BINS - 1)
}

/// Ten bins of width 0.1; the last one includes 1.0.
pub fn reliability_curve(probs: &[f64], labels: &[u8]) -> Result<Vec<CalibrationBin>> {
    check(probs, labels)?;
    let mut n = [0usize; N_BINS];
    let mut sum_p = [0.0f64; N_BINS];
    let mut sum_y = [0usize; N_BINS];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = bin_index(p);
        n[b] += 1;
        sum_p[b] += p;
        sum_y[b] += y as usize;
    }
    Ok((0..N_BINS)
        .map(|b| CalibrationBin {
            lo: b as f64 / N_BINS as f64,
            hi: (b + 1) as f64 / N_BINS as f64,
            n: n[b],
            mean_pred: (n[b] > 0).then(|| sum_p[b] / n[b] as f64),
            observed_frac: (n[b] > 0).then(|| sum_y[b] as f64 / n[b] as f64),
        })
        .collect())
}

/// Counts of predictions per decile.
pub fn probability_histogram(probs: &[f64]) -> [usize; N_BINS] {
    let mut h = [0; N_BINS];
    for &p in probs {
        h[bin_index(p)] += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub training_city: String,
    pub testing_city: String,
    pub n_test: usize,
    pub accuracy: f64,
    pub brier: f64,
    pub brier_ref: f64,
    pub bss: f64,
    pub reliability: Vec<CalibrationBin>,
    pub histogram: [usize; N_BINS],
}

pub fn accuracy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check(probs, labels)?;
    let hits = probs.iter().zip(labels).filter(|(&p, &y)| ((p >= DECISION_THRESHOLD) as u8) == y).count();
    Ok(hits as f64 / probs.len() as f64)
}

pub fn report_from_predictions(
    training_city: &str,
    testing_city: &str,
    probs: &[f64],
    labels: &[u8],
    train_labels: &[u8],
) -> Result<EvaluationReport> {
    let brier = brier_score(probs, labels)?;
    let brier_ref = climatology_brier(train_labels, labels)?;
    Ok(EvaluationReport {
        training_city: training_city.to_string(),
        testing_city: testing_city.to_string(),
        n_test: labels.len(),
        accuracy: accuracy(probs, labels)?,
        brier,
        brier_ref,
        bss: brier_skill_score(brier, brier_ref)?,
        reliability: reliability_curve(probs, labels)?,
        histogram: probability_histogram(probs),
    })
}

/// Scores `model` on raw test features, standardized with the model's own metadata.
pub fn evaluate(
    model: &FittedModel,
    testing_city: &str,
    test: &[SegmentFeatures],
    test_labels: &[u8],
    train_labels: &[u8],
) -> Result<EvaluationReport> {
    model.check_columns()?;
    let design = build_design(test, Scaling::Apply(&model.scaling))?;
    let probs: Vec<f64> = design.matrix.row_iter().map(|r| model.risk_for_row(r.transpose().as_slice())).collect();
    report_from_predictions(&model.city, testing_city, &probs, test_labels, train_labels)
}

/// One city's fitted model with its training labels and held-out test set.
#[derive(Debug, Clone)]
pub struct CityData<'a> {
    pub model: &'a FittedModel,
    pub train_labels: &'a [u8],
    pub test: &'a [SegmentFeatures],
    pub test_labels: &'a [u8],
}

/// Every ordered pair of distinct cities, in input order.
pub fn cross_city(cities: &[CityData<'_>]) -> Result<Vec<EvaluationReport>> {
    let pairs: Vec<(usize, usize)> =
        (0..cities.len()).flat_map(|i| (0..cities.len()).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&cities[i], &cities[j]);
            evaluate(a.model, &b.model.city, b.test, b.test_labels, a.train_labels)
        })
        .collect()
}

pub fn write_report_csv<W: Write>(out: W, reports: &[EvaluationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["training_city", "testing_city", "accuracy", "bs", "bs_baseline", "bss"])?;
    for r in reports {
        w.write_record([
            r.training_city.clone(),
            r.testing_city.clone(),
            r.accuracy.to_string(),
            r.brier.to_string(),
            r.brier_ref.to_string(),
            r.bss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reliability_csv<W: Write>(out: W, bins: &[CalibrationBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "n", "mean_pred", "observed_frac"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for b in bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.n.to_string(), opt(b.mean_pred), opt(b.observed_frac)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reliability diagram with the diagonal and a prediction histogram along the bottom.
pub fn reliability_svg(report: &EvaluationReport) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let x = |p: f64| PAD + p * SIZE;
    let y = |p: f64| PAD + (1.0 - p) * SIZE;
    let mut s = String::new();
    let total = SIZE + 2.0 * PAD;
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let max_count = report.histogram.iter().copied().max().unwrap_or(0).max(1) as f64;
    for (b, &count) in report.histogram.iter().enumerate() {
        let h = 0.2 * SIZE * count as f64 / max_count;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{h}" fill="lightsteelblue"/>"#,
            x(b as f64 / N_BINS as f64) + 1.0,
            y(0.0) - h,
            SIZE / N_BINS as f64 - 2.0
        );
    }
    let points: Vec<String> = report
        .reliability
        .iter()
        .filter_map(|b| Some(format!("{:.2},{:.2}", x(b.mean_pred?), y(b.observed_frac?))))
        .collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="firebrick" stroke-width="2"/>"#, points.join(" "));
    for p in &points {
        let (cx, cy) = p.split_once(',').expect("formatted pair");
        let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="firebrick"/>"#);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">predicted probability</text>"#,
        PAD + SIZE / 2.0,
        total - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">observed severe fraction</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle">{} on {}: BS {:.3}, BSS {:.3}</text>"#,
        PAD + SIZE / 2.0,
        report.training_city,
        report.testing_city,
        report.brier,
        report.bss
    );
    s.push_str("</svg>\n");
    s
}
