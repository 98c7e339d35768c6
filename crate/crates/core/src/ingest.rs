//! Accident file ingestion and severity-label unification.
//!
//! Each city publishes its accident feed with its own column names, date
//! format and severity vocabulary. A [`SchemaDescriptor`] captures all three;
//! the built-in descriptors for `london`, `boston`, `pittsburgh` and `generic`
//! ship with the crate and custom ones can be loaded from JSON.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown schema id `{0}`")]
    UnknownSchema(String),
    #[error("invalid schema descriptor: {0}")]
    InvalidSchema(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("empty file")]
    EmptyFile,
    #[error("unrecognized severity label `{value}` for schema `{schema}`")]
    UnrecognizedLabel { schema: String, value: String },
    #[error("window must cover at least one year, got {0}")]
    InvalidWindow(u32),
    #[error("no records to filter")]
    EmptyInput,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Column names of one feed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaColumns {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub lat: String,
    pub lon: String,
    pub severity: String,
    pub date: String,
}

/// Native labels partitioned into the two unified classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub slight: Vec<String>,
    pub severe: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub id: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub columns: SchemaColumns,
    /// `chrono` format string tried before the ISO-8601 fallback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_format: Option<String>,
    pub labels: LabelMap,
}

fn default_delimiter() -> char {
    ','
}

const BUILTIN_SCHEMAS: [(&str, &str); 4] = [
    ("london", include_str!("../schemas/london.json")),
    ("boston", include_str!("../schemas/boston.json")),
    ("pittsburgh", include_str!("../schemas/pittsburgh.json")),
    ("generic", include_str!("../schemas/generic.json")),
];

impl SchemaDescriptor {
    /// Looks up one of the bundled descriptors by id.
    pub fn builtin(id: &str) -> Result<Self> {
        let key = normalize_label(id);
        let (_, text) = BUILTIN_SCHEMAS
            .iter()
            .find(|(name, _)| *name == key)
            .ok_or_else(|| IngestError::UnknownSchema(id.to_string()))?;
        Self::from_json(text)
    }

    pub fn builtin_ids() -> impl Iterator<Item = &'static str> {
        BUILTIN_SCHEMAS.iter().map(|(name, _)| *name)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: SchemaDescriptor = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks that the two label sets form a partition (disjoint, non-empty).
    pub fn validate(&self) -> Result<()> {
        if self.labels.slight.is_empty() || self.labels.severe.is_empty() {
            return Err(IngestError::InvalidSchema(format!(
                "schema `{}` must map at least one label to each class",
                self.id
            )));
        }
        let slight: BTreeSet<String> = self.labels.slight.iter().map(|l| normalize_label(l)).collect();
        let severe: BTreeSet<String> = self.labels.severe.iter().map(|l| normalize_label(l)).collect();
        if let Some(shared) = slight.intersection(&severe).next() {
            return Err(IngestError::InvalidSchema(format!(
                "label `{shared}` is mapped to both classes in schema `{}`",
                self.id
            )));
        }
        Ok(())
    }

    /// Every native label this schema recognizes, normalized.
    pub fn label_set(&self) -> BTreeSet<String> {
        self.labels
            .slight
            .iter()
            .chain(&self.labels.severe)
            .map(|l| normalize_label(l))
            .collect()
    }

    fn classify(&self, raw: &str) -> Option<Severity> {
        let key = normalize_label(raw);
        if self.labels.slight.iter().any(|l| normalize_label(l) == key) {
            Some(Severity::Slight)
        } else if self.labels.severe.iter().any(|l| normalize_label(l) == key) {
            Some(Severity::Severe)
        } else {
            None
        }
    }

    fn parse_date(&self, text: &str) -> Option<NaiveDate> {
        let text = text.trim();
        if let Some(fmt) = &self.date_format {
            if let Ok(date) = NaiveDate::parse_from_str(text, fmt) {
                return Some(date);
            }
        }
        // ISO-8601, possibly with a time part
        let head = text.get(..10).unwrap_or(text);
        NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
    }
}

/// Lowercased, trimmed, with internal whitespace collapsed.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Slight,
    Severe,
}

impl Severity {
    /// Binary label used downstream; `Severe` is the positive class.
    pub fn label(self) -> u8 {
        match self {
            Severity::Slight => 0,
            Severity::Severe => 1,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Slight => f.write_str("slight"),
            Severity::Severe => f.write_str("severe"),
        }
    }
}

/// One data row as read from a feed, before label unification.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAccident {
    pub schema: String,
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub id: Option<String>,
    pub latitude: f64,
    pub longitude: f64,
    pub raw_severity: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedFile {
    pub accidents: Vec<RawAccident>,
    pub rejects: Vec<Reject>,
}

impl ParsedFile {
    pub fn rows(&self) -> usize {
        self.accidents.len() + self.rejects.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccidentRecord {
    pub id: String,
    #[serde(rename = "lat")]
    pub latitude: f64,
    #[serde(rename = "lon")]
    pub longitude: f64,
    pub severity: Severity,
    pub date: NaiveDate,
    pub source_city: String,
}

pub fn parse_accident_file(path: impl AsRef<Path>, schema: &SchemaDescriptor) -> Result<ParsedFile> {
    let file = std::fs::File::open(path)?;
    parse_accident_reader(file, schema)
}

/// Reads a delimiter-separated feed. Rows whose coordinates, date or
/// severity cannot be used end up in [`ParsedFile::rejects`].
pub fn parse_accident_reader<R: Read>(reader: R, schema: &SchemaDescriptor) -> Result<ParsedFile> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| IngestError::InvalidSchema("delimiter must be a single byte".into()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(IngestError::EmptyFile);
    }
    let find = |name: &str| -> Result<usize> {
        let key = normalize_label(name);
        headers
            .iter()
            .position(|h| normalize_label(h) == key)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let lat_col = find(&schema.columns.lat)?;
    let lon_col = find(&schema.columns.lon)?;
    let sev_col = find(&schema.columns.severity)?;
    let date_col = find(&schema.columns.date)?;
    let id_col = schema.columns.id.as_deref().map(find).transpose()?;

    let mut parsed = ParsedFile::default();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let field = |col: usize| record.get(col).unwrap_or("");

        let reject = |reason: &str| Reject { row, reason: reason.to_string() };
        let (lat, lon) = match (field(lat_col).parse::<f64>(), field(lon_col).parse::<f64>()) {
            (Ok(lat), Ok(lon)) if lat.is_finite() && lon.is_finite() => (lat, lon),
            _ => {
                parsed.rejects.push(reject("unparsable coordinate"));
                continue;
            }
        };
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            parsed.rejects.push(reject("coordinate out of range"));
            continue;
        }
        let severity = field(sev_col);
        if severity.is_empty() {
            parsed.rejects.push(reject("missing severity"));
            continue;
        }
        let Some(date) = schema.parse_date(field(date_col)) else {
            parsed.rejects.push(reject("unparsable date"));
            continue;
        };
        let id = id_col.map(|c| field(c).to_string()).filter(|s| !s.is_empty());
        parsed.accidents.push(RawAccident {
            schema: schema.id.clone(),
            row,
            id,
            latitude: lat,
            longitude: lon,
            raw_severity: severity.to_string(),
            date,
        });
    }
    if parsed.rows() == 0 {
        return Err(IngestError::EmptyFile);
    }
    Ok(parsed)
}

/// Maps a native severity label onto the binary label. Unknown labels are an
/// error carrying the offending value.
pub fn unify_severity(raw: &RawAccident, schema: &SchemaDescriptor) -> Result<AccidentRecord> {
    let severity = schema
        .classify(&raw.raw_severity)
        .ok_or_else(|| IngestError::UnrecognizedLabel {
            schema: schema.id.clone(),
            value: raw.raw_severity.clone(),
        })?;
    Ok(AccidentRecord {
        id: raw
            .id
            .clone()
            .unwrap_or_else(|| format!("{}-{}", schema.id, raw.row)),
        latitude: raw.latitude,
        longitude: raw.longitude,
        severity,
        date: raw.date,
        source_city: schema.id.clone(),
    })
}

/// Keeps the records dated within the last `years` calendar years present in
/// the input, sorted by date (ties by id).
pub fn filter_window(records: &[AccidentRecord], years: u32) -> Result<Vec<AccidentRecord>> {
    if years == 0 {
        return Err(IngestError::InvalidWindow(years));
    }
    let last_year = records
        .iter()
        .map(|r| r.date.year())
        .max()
        .ok_or(IngestError::EmptyInput)?;
    let first_kept = last_year - years as i32 + 1;
    let mut kept: Vec<AccidentRecord> = records
        .iter()
        .filter(|r| r.date.year() >= first_kept)
        .cloned()
        .collect();
    kept.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.id.cmp(&b.id)));
    Ok(kept)
}

/// Records with `from <= date <= to`, sorted the same way as [`filter_window`].
pub fn filter_dates(records: &[AccidentRecord], from: Option<NaiveDate>, to: Option<NaiveDate>) -> Vec<AccidentRecord> {
    let mut kept: Vec<AccidentRecord> = records
        .iter()
        .filter(|r| from.is_none_or(|f| r.date >= f) && to.is_none_or(|t| r.date <= t))
        .cloned()
        .collect();
    kept.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.id.cmp(&b.id)));
    kept
}

pub fn write_jsonl<W: std::io::Write>(mut out: W, records: &[AccidentRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<AccidentRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(IngestError::from))
        .collect()
}
