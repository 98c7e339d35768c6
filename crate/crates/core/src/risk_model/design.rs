use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::street_graph::{Bikelane, Hilliness, SegmentFeatures, Topology};

/// Design column order, fixed for every model and export.
pub const COLUMNS: [&str; 11] = [
    "intercept",
    "speed_limit",
    "width",
    "betweenness",
    "dist_intersect",
    "hilly",
    "curved",
    "bikelane",
    "speed_limit:betweenness",
    "speed_limit:bikelane",
    "speed_limit:dist_intersect",
];

/// Columns standardized before interactions are formed.
pub const CONTINUOUS: [&str; 4] = ["speed_limit", "width", "betweenness", "dist_intersect"];

pub const N_COLUMNS: usize = COLUMNS.len();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: f64,
    pub sd: f64,
}

impl ColumnScaling {
    pub const IDENTITY: ColumnScaling = ColumnScaling { mean: 0.0, sd: 1.0 };

    fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }
}

/// Per-column mean and standard deviation, keyed by column name.
pub type ScalingMetadata = BTreeMap<String, ColumnScaling>;

pub fn identity_scaling() -> ScalingMetadata {
    CONTINUOUS.iter().map(|c| (c.to_string(), ColumnScaling::IDENTITY)).collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Scaling<'a> {
    None,
    Fit,
    Apply(&'a ScalingMetadata),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub scaling: ScalingMetadata,
    /// Continuous columns with zero variance under `Scaling::Fit`; left unscaled.
    pub flagged: Vec<String>,
}

fn raw_continuous(f: &SegmentFeatures) -> [f64; 4] {
    [f.speed_limit, f.width, f.betweenness, f.dist_intersect]
}

fn indicators(f: &SegmentFeatures) -> [f64; 3] {
    [
        (f.hilliness == Hilliness::Hilly) as u8 as f64,
        (f.topology == Topology::Curved) as u8 as f64,
        (f.bikelane == Bikelane::With) as u8 as f64,
    ]
}

/// One design row with the given standardization applied.
pub fn design_row(f: &SegmentFeatures, scaling: &ScalingMetadata) -> Result<[f64; N_COLUMNS]> {
    let raw = raw_continuous(f);
    let mut z = [0.0; 4];
    for (i, name) in CONTINUOUS.iter().enumerate() {
        let s = scaling.get(*name).ok_or_else(|| ModelError::MissingScaling(name.to_string()))?;
        z[i] = s.apply(raw[i]);
    }
    let [v, w, beta, d] = z;
    let [h, theta, b] = indicators(f);
    Ok([1.0, v, w, beta, d, h, theta, b, v * beta, v * b, v * d])
}

pub fn build_design(rows: &[SegmentFeatures], scaling: Scaling<'_>) -> Result<Design> {
    if rows.is_empty() {
        return Err(ModelError::EmptyDesign);
    }
    let mut flagged = Vec::new();
    let metadata = match scaling {
        Scaling::None => identity_scaling(),
        Scaling::Apply(meta) => meta.clone(),
        Scaling::Fit => {
            let n = rows.len() as f64;
            let mut meta = ScalingMetadata::new();
            for (i, name) in CONTINUOUS.iter().enumerate() {
                let values: Vec<f64> = rows.iter().map(|r| raw_continuous(r)[i]).collect();
                let mean = values.iter().sum::<f64>() / n;
                let var = if rows.len() > 1 {
                    values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                let sd = var.sqrt();
                if sd > 1e-12 * mean.abs().max(1.0) {
                    meta.insert(name.to_string(), ColumnScaling { mean, sd });
                } else {
                    flagged.push(name.to_string());
                    meta.insert(name.to_string(), ColumnScaling::IDENTITY);
                }
            }
            meta
        }
    };
    let mut matrix = DMatrix::zeros(rows.len(), N_COLUMNS);
    for (i, f) in rows.iter().enumerate() {
        let row = design_row(f, &metadata)?;
        for (j, x) in row.iter().enumerate() {
            matrix[(i, j)] = *x;
        }
    }
    Ok(Design { matrix, scaling: metadata, flagged })
}

/// Writes the design with the fixed column order and `y` last.
pub fn write_design_csv<W: Write>(out: W, matrix: &DMatrix<f64>, labels: &[u8]) -> Result<()> {
    if matrix.nrows() != labels.len() {
        return Err(ModelError::LengthMismatch { rows: matrix.nrows(), labels: labels.len() });
    }
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(COLUMNS.iter().copied().chain(["y"]))?;
    for (i, y) in labels.iter().enumerate() {
        let mut rec: Vec<String> = matrix.row(i).iter().map(|x| x.to_string()).collect();
        rec.push(y.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an unstandardized design CSV back into feature rows and labels.
pub fn read_design_csv(path: impl AsRef<Path>) -> Result<(Vec<SegmentFeatures>, Vec<u8>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<String> = COLUMNS.iter().copied().chain(["y"]).map(str::to_string).collect();
    if header != expected {
        return Err(ModelError::ColumnMismatch { expected, got: header });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| ModelError::BadCsv(format!("row {}: column `{}` is not numeric", i + 1, expected[j])))
        };
        let flag = |j: usize| -> Result<bool> {
            match num(j)? {
                x if x == 0.0 => Ok(false),
                x if x == 1.0 => Ok(true),
                x => Err(ModelError::BadCsv(format!("row {}: `{}` must be 0 or 1, got {x}", i + 1, expected[j]))),
            }
        };
        features.push(SegmentFeatures {
            speed_limit: num(1)?,
            width: num(2)?,
            betweenness: num(3)?,
            dist_intersect: num(4)?,
            hilliness: if flag(5)? { Hilliness::Hilly } else { Hilliness::Flat },
            topology: if flag(6)? { Topology::Curved } else { Topology::Straight },
            bikelane: if flag(7)? { Bikelane::With } else { Bikelane::Without },
        });
        labels.push(flag(11)? as u8);
    }
    Ok((features, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(v: f64, beta: f64) -> SegmentFeatures {
        SegmentFeatures {
            speed_limit: v,
            width: 6.0,
            dist_intersect: 10.0,
            hilliness: Hilliness::Flat,
            topology: Topology::Straight,
            bikelane: Bikelane::Without,
            betweenness: beta,
        }
    }

    #[test]
    fn reference_levels_are_zero() {
        let d = build_design(&[features(30.0, 0.1)], Scaling::None).unwrap();
        let row = d.matrix.row(0);
        assert_eq!((row[5], row[6], row[7]), (0.0, 0.0, 0.0));
        assert_eq!(row[0], 1.0);
    }

    #[test]
    fn interaction_of_standardized_columns() {
        let meta: ScalingMetadata = [
            ("speed_limit", ColumnScaling { mean: 30.0, sd: 5.0 }),
            ("width", ColumnScaling::IDENTITY),
            ("betweenness", ColumnScaling { mean: 0.0, sd: 1.0 }),
            ("dist_intersect", ColumnScaling::IDENTITY),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        // standardized v = (40 - 30) / 5 = 2, beta = 0.5
        let row = design_row(&features(40.0, 0.5), &meta).unwrap();
        assert_eq!(row[1], 2.0);
        assert_eq!(row[8], 1.0);
    }

    #[test]
    fn fit_then_apply_is_identical() {
        let rows: Vec<_> = (0..20).map(|i| features(20.0 + i as f64, 0.01 * i as f64)).collect();
        let fitted = build_design(&rows, Scaling::Fit).unwrap();
        let applied = build_design(&rows, Scaling::Apply(&fitted.scaling)).unwrap();
        assert_eq!(fitted.matrix, applied.matrix);
        let mean_v: f64 = fitted.matrix.column(1).sum() / 20.0;
        assert!(mean_v.abs() < 1e-12);
    }

    #[test]
    fn zero_variance_column_is_flagged() {
        let rows: Vec<_> = (0..5).map(|i| features(30.0, 0.1 * i as f64)).collect();
        let d = build_design(&rows, Scaling::Fit).unwrap();
        assert!(d.flagged.contains(&"speed_limit".to_string()));
        assert!(d.flagged.contains(&"width".to_string()));
        assert_eq!(d.scaling["speed_limit"], ColumnScaling::IDENTITY);
        assert_eq!(d.matrix[(0, 1)], 30.0);
    }

    #[test]
    fn missing_scaling_and_empty_input() {
        assert!(matches!(build_design(&[], Scaling::Fit), Err(ModelError::EmptyDesign)));
        let meta = ScalingMetadata::new();
        assert!(matches!(
            build_design(&[features(1.0, 0.0)], Scaling::Apply(&meta)),
            Err(ModelError::MissingScaling(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![features(30.0, 0.25), SegmentFeatures { bikelane: Bikelane::With, ..features(48.28032, 0.5) }];
        let d = build_design(&rows, Scaling::None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_design_csv(std::fs::File::create(&path).unwrap(), &d.matrix, &[0, 1]).unwrap();
        let (back, labels) = read_design_csv(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(labels, vec![0, 1]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("intercept,speed_limit,width,betweenness,dist_intersect,hilly,curved,bikelane,"));
        assert!(text.lines().next().unwrap().ends_with(",y"));
    }
}
