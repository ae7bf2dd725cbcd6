//! CSV formats: labeled feature files and assessment reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;

use super::canonical::{format_float, write_atomic};
use crate::assess::AssessmentReport;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => malformed(path, format!("{other:?}")),
    }
}

/// A dataset read from CSV, with the raw label strings in class-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedDataset {
    pub data: LabeledDataset,
    pub label_names: Vec<String>,
}

/// Reads a header-first numeric CSV. Every column except `label_column` is a
/// feature; class indices follow first appearance of each label value, and
/// the dataset's label set is `0..C`.
pub fn ingest_feature_csv(path: &Path, label_column: &str) -> Result<IngestedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no header", path.display())));
    }
    let label_at = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::InvalidInput(format!("no column named {label_column:?} in {}", path.display())))?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(malformed(path, "no feature columns"));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        for (col, field) in record.iter().enumerate() {
            if col == label_at {
                let next = names.len();
                let id = *index.entry(field.to_string()).or_insert_with(|| {
                    names.push(field.to_string());
                    next
                });
                labels.push(id);
            } else {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| malformed(path, format!("row {}: {field:?} is not a number", line + 1)))?;
                if !v.is_finite() {
                    return Err(malformed(path, format!("row {}: non-finite value", line + 1)));
                }
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no rows", path.display())));
    }
    let x = Array2::from_shape_vec((labels.len(), dim), values).map_err(|e| malformed(path, e.to_string()))?;
    let data = LabeledDataset::new(x, labels, (0..names.len()).collect())?;
    Ok(IngestedDataset { data, label_names: names })
}

/// Writes `f0..f{D-1},label`, where `label` is the pool class id.
pub fn export_feature_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, &y) in data.labels().iter().enumerate() {
        let mut row: Vec<String> = data.instance(i).iter().map(|&v| format_float(v)).collect();
        row.push(data.label_set()[y].to_string());
        writer.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub const REPORT_COLUMNS: [&str; 7] = ["teacher_id", "regime", "metric", "rank", "converged", "seconds", "ground_truth_acc"];

/// Renders the report CSV. Failed rows leave `metric` and `rank` empty;
/// with `include_timing == false` the `seconds` column is left empty so the
/// file is reproducible byte for byte.
pub fn report_csv(report: &AssessmentReport, include_timing: bool) -> String {
    let external: BTreeSet<&String> = report.rows.iter().flat_map(|r| r.external.keys()).collect();
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(external.iter().map(|s| s.to_string()));
    writer.write_record(&header).unwrap();
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    for row in &report.rows {
        let mut record = vec![
            row.teacher_id.to_string(),
            report.regime.to_string(),
            opt(row.metric),
            row.rank.map(|r| r.to_string()).unwrap_or_default(),
            row.converged.to_string(),
            if include_timing { format!("{:.6}", row.seconds) } else { String::new() },
            opt(row.ground_truth_acc),
        ];
        for key in &external {
            record.push(opt(row.external.get(*key).copied()));
        }
        writer.write_record(&record).unwrap();
    }
    String::from_utf8(writer.into_inner().unwrap()).unwrap()
}

pub fn write_report_csv(path: &Path, report: &AssessmentReport, include_timing: bool) -> Result<()> {
    write_atomic(path, report_csv(report, include_timing).as_bytes())
}

/// Reads externally computed metric columns keyed by a `teacher_id` column.
pub fn read_external_metrics(path: &Path) -> Result<BTreeMap<usize, BTreeMap<String, f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_at = headers
        .iter()
        .position(|h| h == "teacher_id")
        .ok_or_else(|| Error::InvalidInput(format!("{} has no teacher_id column", path.display())))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let id: usize = record[id_at]
            .trim()
            .parse()
            .map_err(|_| malformed(path, format!("bad teacher id {:?}", &record[id_at])))?;
        let mut metrics = BTreeMap::new();
        for (col, field) in record.iter().enumerate() {
            if col == id_at || field.trim().is_empty() {
                continue;
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(path, format!("{field:?} is not a number")))?;
            metrics.insert(headers[col].to_string(), v);
        }
        if out.insert(id, metrics).is_some() {
            return Err(Error::DuplicateTeacher(id));
        }
    }
    Ok(out)
}

/// Adds external metric columns to the matching report rows.
pub fn attach_external_metrics(report: &mut AssessmentReport, metrics: &BTreeMap<usize, BTreeMap<String, f64>>) {
    for row in &mut report.rows {
        if let Some(m) = metrics.get(&row.teacher_id) {
            row.external.extend(m.iter().map(|(k, v)| (k.clone(), *v)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn toy_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "a,species,b\n1.5,cat,2\n-3,dog,4e-1\n0,cat,0\n").unwrap();
        let got = ingest_feature_csv(&path, "species").unwrap();
        assert_eq!(got.data.len(), 3);
        assert_eq!(got.data.dim(), 2);
        assert_eq!(got.data.labels(), &[0, 1, 0]);
        assert_eq!(got.label_names, vec!["cat", "dog"]);
        assert_eq!(got.data.instances(), &array![[1.5, 2.0], [-3.0, 0.4], [0.0, 0.0]]);
        assert!(matches!(ingest_feature_csv(&path, "kind"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(ingest_feature_csv(&path, "label"), Err(Error::EmptyInput(_))));
        std::fs::write(&path, "x,label\n").unwrap();
        assert!(matches!(ingest_feature_csv(&path, "label"), Err(Error::EmptyInput(_))));
        std::fs::write(&path, "x,y,label\n1,2,a\n1,b\n").unwrap();
        assert!(matches!(ingest_feature_csv(&path, "label"), Err(Error::Malformed { .. })));
        std::fs::write(&path, "x,label\none,a\n").unwrap();
        assert!(matches!(ingest_feature_csv(&path, "label"), Err(Error::Malformed { .. })));
    }
}
