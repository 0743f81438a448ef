//! Confusion matrices, precision / recall / F1 with macro and weighted
//! averages, and the files written for plotting.
//!
//! Matrices are always rows = actual class, columns = predicted class.
//! Undefined ratios (zero denominators) are reported as 0.

mod export;

use std::fmt;
use std::io;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledRecord, OperatorClass};
use crate::models::{predict_class, ModelError};
use crate::training::ModelCheckpoint;

pub use export::{
    export_reports, read_report_json, ExportedFiles, ReportDocument, MACRO_SUMMARY_HEADER, ORIENTATION,
    PER_CLASS_HEADER, REPORT_SCHEMA_VERSION,
};

const K: usize = OperatorClass::COUNT;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("confusion matrix has no entries")]
    EmptyMatrix,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn counts(&self) -> &[[u64; K]; K] {
        &self.counts
    }

    pub fn get(&self, actual: OperatorClass, predicted: OperatorClass) -> u64 {
        self.counts[actual.code()][predicted.code()]
    }

    pub fn record(&mut self, actual: OperatorClass, predicted: OperatorClass) {
        self.counts[actual.code()][predicted.code()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    /// Number of samples whose actual class is `c`.
    pub fn row_sum(&self, c: OperatorClass) -> u64 {
        self.counts[c.code()].iter().sum()
    }

    /// Number of samples predicted as `c`.
    pub fn column_sum(&self, c: OperatorClass) -> u64 {
        self.counts.iter().map(|row| row[c.code()]).sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>12}", "actual\\pred")?;
        for c in OperatorClass::ALL {
            write!(f, " {:>10}", c.name())?;
        }
        for c in OperatorClass::ALL {
            write!(f, "\n{:>12}", c.name())?;
            for n in self.counts[c.code()] {
                write!(f, " {n:>10}")?;
            }
        }
        Ok(())
    }
}

pub fn confusion_matrix(predictions: &[OperatorClass], labels: &[OperatorClass]) -> Result<ConfusionMatrix, EvaluationError> {
    if predictions.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predictions.iter().zip(labels) {
        cm.record(a, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: OperatorClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub accuracy: f64,
    pub total: u64,
}

impl ClassificationReport {
    pub fn class(&self, c: OperatorClass) -> &ClassMetrics {
        &self.per_class[c.code()]
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport, EvaluationError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvaluationError::EmptyMatrix);
    }
    let per_class: Vec<ClassMetrics> = OperatorClass::ALL
        .iter()
        .map(|&c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.column_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            ClassMetrics {
                class: c,
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.row_sum(c),
            }
        })
        .collect();
    let average = |weight: &dyn Fn(&ClassMetrics) -> f64| {
        let w: f64 = per_class.iter().map(weight).sum();
        let mean = |field: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| weight(m) * field(m)).sum::<f64>() / w;
        Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        }
    };
    let macro_avg = average(&|_| 1.0);
    let weighted = average(&|m| m.support as f64);
    Ok(ClassificationReport {
        per_class,
        macro_avg,
        weighted,
        accuracy: ratio(cm.trace(), total),
        total,
    })
}

/// Predicts every record with the checkpoint's own preprocessing.
pub fn evaluate_model(
    checkpoint: &ModelCheckpoint,
    records: &[LabeledRecord],
) -> Result<(ConfusionMatrix, ClassificationReport), EvaluationError> {
    if records.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let predictions: Vec<OperatorClass> = records
        .par_iter()
        .map(|r| {
            let seq = checkpoint.preprocessor.encode(&r.summary);
            Ok(predict_class(&checkpoint.model.predict_proba(&seq)?))
        })
        .collect::<Result<_, ModelError>>()?;
    let labels: Vec<OperatorClass> = records.iter().map(|r| r.class).collect();
    let cm = confusion_matrix(&predictions, &labels)?;
    let report = classification_report(&cm)?;
    Ok((cm, report))
}
