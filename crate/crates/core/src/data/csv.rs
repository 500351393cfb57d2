use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use super::{Dataset, FeatureStats, Task};
use crate::error::{Error, Result};
use crate::rkhs::Points;

/// Columns never used as features unless requested explicitly.
const IGNORED_COLUMNS: [&str; 5] = ["id", "eventid", "weight", "kaggleset", "kaggleweight"];

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub label_column: String,
    /// Explicit feature columns; by default every `feature_*` column, or all
    /// remaining columns when none carry that prefix.
    pub feature_columns: Option<Vec<String>>,
    pub task: Task,
    pub standardize: bool,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>, task: Task) -> Self {
        Self {
            label_column: label_column.into(),
            feature_columns: None,
            task,
            standardize: false,
        }
    }
}

fn parse_label(raw: &str, task: Task) -> Option<f64> {
    let raw = raw.trim();
    if task == Task::BinaryClassification {
        match raw {
            "s" => return Some(1.0),
            "b" => return Some(0.0),
            _ => {}
        }
    }
    raw.parse().ok()
}

/// Reads a headered CSV; lines starting with `#` are comments.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column '{name}'", path.display())))
    };
    let label_idx = find(&opts.label_column)?;
    let feature_idx: Vec<usize> = match &opts.feature_columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => {
            let prefixed: Vec<usize> = (0..headers.len())
                .filter(|&i| i != label_idx && headers[i].starts_with("feature_"))
                .collect();
            if prefixed.is_empty() {
                (0..headers.len())
                    .filter(|&i| i != label_idx && !IGNORED_COLUMNS.contains(&headers[i].to_ascii_lowercase().as_str()))
                    .collect()
            } else {
                prefixed
            }
        }
    };
    if feature_idx.is_empty() {
        return Err(Error::Schema(format!("{}: no feature columns", path.display())));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(format!("{}: data row {row}: {e}", path.display())))?;
        for &j in &feature_idx {
            let raw = record.get(j).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| {
                Error::Schema(format!(
                    "{}: data row {row}, column '{}': '{raw}' is not numeric",
                    path.display(),
                    &headers[j]
                ))
            })?;
            data.push(v);
        }
        let raw = record.get(label_idx).unwrap_or("");
        let y = parse_label(raw, opts.task).ok_or_else(|| {
            Error::Schema(format!(
                "{}: data row {row}, label '{raw}' is not a valid value",
                path.display()
            ))
        })?;
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::input(format!("{}: no data rows", path.display())));
    }
    let ds = Dataset::new(Points::new(feature_idx.len(), data)?, DVector::from_vec(labels), opts.task)?;
    if opts.standardize {
        let stats = FeatureStats::fit(&ds.inputs)?;
        ds.standardized_with(&stats)
    } else {
        Ok(ds)
    }
}

/// Writes `feature_0.., target` columns, preceded by `# ` comment lines.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for c in comments {
        writeln!(out, "# {c}").map_err(io_err)?;
    }
    let header: Vec<String> = (0..ds.dim()).map(|i| format!("feature_{i}")).chain(["target".to_string()]).collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for (x, y) in ds.inputs.rows().zip(ds.targets.iter()) {
        let line: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
