//! CSV datasets: header `f0,...,f{F-1},a0,...,a{M-1},id`, one sample per row.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use hfe_core::{validate_dataset, Sample, Violation};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
    pub num_attrs: usize,
}

/// A validation failure tied back to its line in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct LocatedViolation {
    pub line: Option<u64>,
    pub violation: Violation,
}

impl fmt::Display for LocatedViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.violation),
            None => write!(f, "{}", self.violation),
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("header is missing column {0}")]
    MissingColumn(String),
    #[error("header has unexpected column {0:?}")]
    UnexpectedColumn(String),
    #[error("header repeats column {0}")]
    DuplicateColumn(String),
    #[error("line {line}, column {column}: cannot parse {value:?} as {expected}")]
    Parse {
        line: u64,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("dataset has no rows")]
    Empty,
    #[error("{}", list(.0))]
    Invalid(Vec<LocatedViolation>),
}

fn list(v: &[LocatedViolation]) -> String {
    let mut out = format!("{} dataset violation(s):", v.len());
    for x in v {
        out.push_str(&format!("\n  {x}"));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Column {
    Feature(usize),
    Attr(usize),
    Id,
}

fn parse_header(header: &csv::StringRecord) -> Result<(Vec<Column>, usize, usize), LoadError> {
    let mut cols = Vec::with_capacity(header.len());
    let mut seen = BTreeMap::new();
    for name in header {
        let col = if name == "id" {
            Column::Id
        } else if let Some(k) = name.strip_prefix('f').and_then(|k| k.parse().ok()) {
            Column::Feature(k)
        } else if let Some(k) = name.strip_prefix('a').and_then(|k| k.parse().ok()) {
            Column::Attr(k)
        } else {
            return Err(LoadError::UnexpectedColumn(name.to_string()));
        };
        if seen.insert(col, ()).is_some() {
            return Err(LoadError::DuplicateColumn(name.to_string()));
        }
        cols.push(col);
    }
    let count = |pick: fn(&Column) -> Option<usize>| cols.iter().filter_map(pick).max().map_or(0, |k| k + 1);
    let f = count(|c| if let Column::Feature(k) = c { Some(*k) } else { None });
    let m = count(|c| if let Column::Attr(k) = c { Some(*k) } else { None });
    let required = (0..f.max(1))
        .map(|k| (Column::Feature(k), format!("f{k}")))
        .chain((0..m.max(1)).map(|k| (Column::Attr(k), format!("a{k}"))))
        .chain([(Column::Id, "id".to_string())]);
    for (col, name) in required {
        if !seen.contains_key(&col) {
            return Err(LoadError::MissingColumn(name));
        }
    }
    Ok((cols, f, m))
}

fn parse_field<T: std::str::FromStr>(
    value: &str,
    line: u64,
    column: String,
    expected: &'static str,
) -> Result<T, LoadError> {
    value.trim().parse().map_err(|_| LoadError::Parse {
        line,
        column,
        value: value.to_string(),
        expected,
    })
}

/// Parses and validates a dataset; any violation aborts the load.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, LoadError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let (cols, f, m) = parse_header(rdr.headers()?)?;
    let mut samples = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut features = vec![0.0; f];
        let mut attrs = vec![0u8; m];
        let mut id = 0;
        for (col, value) in cols.iter().zip(record.iter()) {
            match *col {
                Column::Feature(k) => features[k] = parse_field(value, line, format!("f{k}"), "a number")?,
                Column::Attr(k) => attrs[k] = parse_field(value, line, format!("a{k}"), "an attribute value")?,
                Column::Id => id = parse_field(value, line, "id".to_string(), "an unsigned integer id")?,
            }
        }
        samples.push(Sample::new(features, attrs, id));
        lines.push(line);
    }
    let violations = validate_dataset(&samples).map_err(|_| LoadError::Empty)?;
    if !violations.is_empty() {
        let located = violations
            .into_iter()
            .map(|v| {
                let line = match v {
                    Violation::FeatureLength { sample, .. }
                    | Violation::AttrLength { sample, .. }
                    | Violation::NonFiniteFeature { sample, .. }
                    | Violation::NonBinaryAttr { sample, .. } => Some(lines[sample]),
                    Violation::IdConsistency { .. } => None,
                };
                LocatedViolation { line, violation: v }
            })
            .collect();
        return Err(LoadError::Invalid(located));
    }
    Ok(Dataset {
        samples,
        feature_dim: f,
        num_attrs: m,
    })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, LoadError> {
    read_csv(std::fs::File::open(path)?)
}

pub fn header(feature_dim: usize, num_attrs: usize) -> Vec<String> {
    (0..feature_dim)
        .map(|k| format!("f{k}"))
        .chain((0..num_attrs).map(|k| format!("a{k}")))
        .chain(["id".to_string()])
        .collect()
}

/// Writes samples with shortest round-trip float formatting, so a reload
/// is bit-identical.
pub fn write_csv<W: Write>(writer: W, samples: &[Sample]) -> Result<(), LoadError> {
    let first = samples.first().ok_or(LoadError::Empty)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(first.feature_dim(), first.num_attrs()))?;
    for s in samples {
        let row = s
            .features
            .iter()
            .map(|v| v.to_string())
            .chain(s.attrs.iter().map(|a| a.to_string()))
            .chain([s.id.to_string()]);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, samples: &[Sample]) -> Result<(), LoadError> {
    write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), samples)
}
