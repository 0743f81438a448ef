use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Averages, ClassMetrics, ClassificationReport, ConfusionMatrix, EvaluationError};
use crate::corpus::OperatorClass;
use crate::training::{write_history_csv, EpochRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const ORIENTATION: &str = "rows=actual,columns=predicted";
pub const PER_CLASS_HEADER: &str = "model,class,precision,recall,f1";
pub const MACRO_SUMMARY_HEADER: &str =
    "model,macro_precision,macro_recall,macro_f1,weighted_precision,weighted_recall,weighted_f1,accuracy";

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub model: String,
    pub split: String,
    pub orientation: String,
    pub classes: Vec<OperatorClass>,
    pub confusion_matrix: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub accuracy: f64,
    pub total: u64,
}

impl ReportDocument {
    pub fn new(model: &str, split: &str, report: &ClassificationReport, cm: &ConfusionMatrix) -> Self {
        ReportDocument {
            schema_version: REPORT_SCHEMA_VERSION,
            model: model.to_string(),
            split: split.to_string(),
            orientation: ORIENTATION.to_string(),
            classes: OperatorClass::ALL.to_vec(),
            confusion_matrix: *cm,
            per_class: report.per_class.clone(),
            macro_avg: report.macro_avg,
            weighted: report.weighted,
            accuracy: report.accuracy,
            total: report.total,
        }
    }

    pub fn report(&self) -> ClassificationReport {
        ClassificationReport {
            per_class: self.per_class.clone(),
            macro_avg: self.macro_avg,
            weighted: self.weighted,
            accuracy: self.accuracy,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFiles {
    pub report_json: PathBuf,
    pub history_csv: PathBuf,
    pub per_class_csv: PathBuf,
    pub macro_summary_csv: PathBuf,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), EvaluationError> {
    fs::write(path, contents).map_err(|source| EvaluationError::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_field(s: &str) -> String {
    let mut buf = Vec::new();
    crate::corpus::write_csv_row(&mut buf, &[s]).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8").trim_end_matches('\n').to_string()
}

/// Writes `report.json`, `history.csv`, `per_class_metrics.csv` and
/// `macro_summary.csv` into `dir`, creating it if needed.
pub fn export_reports(
    report: &ClassificationReport,
    cm: &ConfusionMatrix,
    history: &[EpochRecord],
    dir: &Path,
    model: &str,
    split: &str,
) -> Result<ExportedFiles, EvaluationError> {
    fs::create_dir_all(dir).map_err(|source| EvaluationError::IoFailure {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = ExportedFiles {
        report_json: dir.join("report.json"),
        history_csv: dir.join("history.csv"),
        per_class_csv: dir.join("per_class_metrics.csv"),
        macro_summary_csv: dir.join("macro_summary.csv"),
    };

    let doc = ReportDocument::new(model, split, report, cm);
    let mut json = serde_json::to_vec_pretty(&doc).expect("report serializes");
    json.push(b'\n');
    write_file(&files.report_json, &json)?;

    let mut hist = Vec::new();
    write_history_csv(history, &mut hist).expect("in-memory write");
    write_file(&files.history_csv, &hist)?;

    let name = csv_field(model);
    let mut per_class = format!("{PER_CLASS_HEADER}\n");
    for m in &report.per_class {
        per_class.push_str(&format!("{name},{},{},{},{}\n", m.class.name(), m.precision, m.recall, m.f1));
    }
    write_file(&files.per_class_csv, per_class.as_bytes())?;

    let (a, w) = (report.macro_avg, report.weighted);
    let summary = format!(
        "{MACRO_SUMMARY_HEADER}\n{name},{},{},{},{},{},{},{}\n",
        a.precision, a.recall, a.f1, w.precision, w.recall, w.f1, report.accuracy
    );
    write_file(&files.macro_summary_csv, summary.as_bytes())?;
    Ok(files)
}

pub fn read_report_json(path: &Path) -> Result<ReportDocument, EvaluationError> {
    let io_err = |source| EvaluationError::IoFailure {
        path: path.to_path_buf(),
        source,
    };
    let text = fs::read_to_string(path).map_err(io_err)?;
    serde_json::from_str(&text).map_err(|e| io_err(io::Error::new(io::ErrorKind::InvalidData, e)))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::classification_report;
    use crate::training::read_history_csv;

    fn sample() -> (ClassificationReport, ConfusionMatrix, Vec<EpochRecord>) {
        let cm = ConfusionMatrix::from_counts([[5, 1, 0], [2, 3, 0], [0, 1, 2]]);
        let history = (1..=4)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 1.0 / e as f64,
                train_accuracy: 0.1 * e as f64,
                validation_loss: 1.1 / e as f64,
                validation_accuracy: 0.07 * e as f64,
            })
            .collect();
        (classification_report(&cm).unwrap(), cm, history)
    }

    #[test]
    fn round_trip_and_schema() {
        let (report, cm, history) = sample();
        let dir = tempfile::tempdir().unwrap();
        let files = export_reports(&report, &cm, &history, dir.path(), "blstm", "test").unwrap();

        let doc = read_report_json(&files.report_json).unwrap();
        assert_eq!(doc.report(), report);
        assert_eq!(doc.confusion_matrix, cm);

        let v: serde_json::Value = serde_json::from_slice(&fs::read(&files.report_json).unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "accuracy",
                "classes",
                "confusion_matrix",
                "macro",
                "model",
                "orientation",
                "per_class",
                "schema_version",
                "split",
                "total",
                "weighted"
            ]
        );
        assert_eq!(v["confusion_matrix"][1][0], 2);

        let hist = read_history_csv(fs::read(&files.history_csv).unwrap().as_slice()).unwrap();
        assert_eq!(hist, history);

        let per_class = fs::read_to_string(&files.per_class_csv).unwrap();
        let rows: Vec<&str> = per_class.lines().collect();
        assert_eq!(rows[0], PER_CLASS_HEADER);
        assert_eq!(rows.len(), 4);
        for (row, m) in rows[1..].iter().zip(&report.per_class) {
            let f: Vec<&str> = row.split(',').collect();
            assert_eq!(f[..2], ["blstm", m.class.name()]);
            let p: f64 = f[2].parse().unwrap();
            assert!((p - m.precision).abs() < 1e-12);
            assert_eq!(f[4].parse::<f64>().unwrap(), m.f1);
        }

        let summary = fs::read_to_string(&files.macro_summary_csv).unwrap();
        let row: Vec<f64> = summary.lines().nth(1).unwrap().split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert_eq!(row[0], report.macro_avg.precision);
        assert_eq!(row[6], report.accuracy);
    }

    #[test]
    fn unwritable_directory() {
        let (report, cm, history) = sample();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = export_reports(&report, &cm, &history, &blocker.join("sub"), "cnn", "test").unwrap_err();
        assert!(matches!(err, EvaluationError::IoFailure { .. }));
    }
}
