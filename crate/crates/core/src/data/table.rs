use std::path::Path;

use super::{Dataset, Sample, Schema};
use crate::error::{Error, Result};

/// Reads a comma-delimited table with a header row naming every column of
/// `schema` (any order, no extras).
///
/// Feature vocabularies come from `field_vocab` when given, otherwise from the
/// largest index seen per field. Rows breaking `y1 ≥ … ≥ yT` abort the load;
/// the error lists their file line numbers (the header is line 1).
pub fn load_table(path: &Path, schema: &Schema, field_vocab: Option<&[usize]>) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let columns = schema.columns();
    if let Some(extra) = header.iter().find(|h| !columns.contains(&h.as_str())) {
        return Err(parse_err(1, format!("unexpected column `{extra}`")));
    }
    let feature_cols = schema.features.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let label_cols = schema.labels.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let core_col = find(&schema.core)?;
    let ts_col = find(&schema.timestamp)?;

    let mut samples = Vec::new();
    let mut violations = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| record.get(col).unwrap_or("");
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v = field(c)
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("`{}`: not a feature index: {:?}", header[c], field(c))))?;
            features.push(v);
        }
        let mut labels = Vec::with_capacity(label_cols.len());
        for &c in &label_cols {
            match field(c) {
                "0" => labels.push(0),
                "1" => labels.push(1),
                other => return Err(parse_err(line, format!("`{}`: label must be 0 or 1, got {other:?}", header[c]))),
            }
        }
        let core: f64 = field(core_col)
            .parse()
            .map_err(|_| parse_err(line, format!("`{}`: not a number: {:?}", schema.core, field(core_col))))?;
        if !(core.is_finite() && core >= 0.0) {
            return Err(parse_err(line, format!("`{}` must be finite and non-negative, got {core}", schema.core)));
        }
        let timestamp: i64 = field(ts_col)
            .parse()
            .map_err(|_| parse_err(line, format!("`{}`: not an integer: {:?}", schema.timestamp, field(ts_col))))?;
        let sample = Sample {
            features,
            labels,
            core,
            timestamp,
        };
        if !sample.is_monotone() {
            violations.push(line);
        }
        samples.push(sample);
    }
    if !violations.is_empty() {
        return Err(Error::LabelConstraint { rows: violations });
    }

    let field_vocab = match field_vocab {
        Some(v) => v.to_vec(),
        None => (0..schema.features.len())
            .map(|j| samples.iter().map(|s| s.features[j] + 1).max().unwrap_or(1))
            .collect(),
    };
    let dataset = Dataset {
        schema: schema.clone(),
        field_vocab,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Builds a generic schema from a file header: `f<i>` feature columns and
/// `y<t>` label columns in numeric order, plus `core` and `ts`.
pub fn infer_schema(path: &Path) -> Result<Schema> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?;
    let numbered = |prefix: char| {
        let mut cols: Vec<(usize, String)> = header
            .iter()
            .filter_map(|h| {
                let rest = h.strip_prefix(prefix)?;
                rest.parse::<usize>().ok().map(|i| (i, h.to_string()))
            })
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, h)| h).collect::<Vec<_>>()
    };
    let schema = Schema {
        features: numbered('f'),
        labels: numbered('y'),
        core: "core".into(),
        timestamp: "ts".into(),
    };
    if schema.features.is_empty() || schema.labels.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "header needs f<i> feature and y<t> label columns; pass an explicit schema otherwise".into(),
        });
    }
    Ok(schema)
}

/// Writes `dataset` in the layout [`load_table`] reads, columns in schema order.
pub fn write_table(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(dataset.schema.columns())?;
    let mut row: Vec<String> = Vec::new();
    for s in &dataset.samples {
        row.clear();
        row.extend(s.features.iter().map(usize::to_string));
        row.extend(s.labels.iter().map(u8::to_string));
        row.push(format_float(s.core));
        row.push(s.timestamp.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn format_float(v: f64) -> String {
    format!("{v:?}")
}
