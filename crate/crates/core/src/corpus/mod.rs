//! Record ingestion, operator annotation, cleaning and dataset splitting.

mod clean;
mod csv;
mod mapping;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::csv::{ingest_records, parse_csv, read_labeled_csv, write_csv_row, write_labeled_csv, CsvRow};
pub use clean::{clean_records, CleanSummary};
pub use mapping::{annotate, annotate_all, normalize_operator, OperatorMapping, UnmappedAudit};
pub use split::{split_dataset, split_dataset_stratified, SplitDataset, MIN_SPLIT_RECORDS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("column {column:?} not found in header (row {row})")]
    MissingColumn { column: String, row: usize },
    #[error("malformed CSV at row {row}: {reason}")]
    MalformedCsv { row: usize, reason: String },
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("operator {0:?} matches no mapping pattern")]
    UnmappedOperator(String),
    #[error("mapping line {line}: {reason}")]
    MappingSyntax { line: usize, reason: String },
    #[error("mapping pattern {0:?} appears more than once after normalization")]
    DuplicatePattern(String),
    #[error("need at least {min} records to split, got {got}")]
    TooFewRecords { min: usize, got: usize },
    #[error("unknown operator class {0:?}")]
    UnknownClass(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The three target labels. Codes follow alphabetical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorClass {
    Commercial = 0,
    Military = 1,
    Private = 2,
}

impl OperatorClass {
    pub const ALL: [OperatorClass; 3] = [
        OperatorClass::Commercial,
        OperatorClass::Military,
        OperatorClass::Private,
    ];
    pub const COUNT: usize = 3;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorClass::Commercial => "Commercial",
            OperatorClass::Military => "Military",
            OperatorClass::Private => "Private",
        }
    }
}

impl fmt::Display for OperatorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorClass {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| CorpusError::UnknownClass(t.to_string()))
    }
}

/// One source row: raw operator label and incident narrative.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawRecord {
    pub operator: String,
    pub summary: String,
}

impl RawRecord {
    pub fn new(operator: impl Into<String>, summary: impl Into<String>) -> Self {
        RawRecord {
            operator: operator.into(),
            summary: summary.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledRecord {
    pub class: OperatorClass,
    pub summary: String,
}

impl LabeledRecord {
    pub fn new(class: OperatorClass, summary: impl Into<String>) -> Self {
        LabeledRecord {
            class,
            summary: summary.into(),
        }
    }
}
