use std::collections::HashMap;
use std::io::{self, Write};

use super::{write_csv_row, CorpusError, LabeledRecord, OperatorClass, RawRecord};

const STARTER_MAPPING: &str = include_str!("../../data/operator_mapping.tsv");

/// Case-folds, trims and collapses internal whitespace runs to one space.
pub fn normalize_operator(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized operator patterns and their classes, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMapping {
    entries: Vec<(String, OperatorClass)>,
    exact: HashMap<String, usize>,
}

impl OperatorMapping {
    pub fn new<S: AsRef<str>>(entries: impl IntoIterator<Item = (S, OperatorClass)>) -> Result<Self, CorpusError> {
        let mut list = Vec::new();
        let mut exact = HashMap::new();
        for (pattern, class) in entries {
            let norm = normalize_operator(pattern.as_ref());
            if norm.is_empty() {
                return Err(CorpusError::MappingSyntax {
                    line: list.len() + 1,
                    reason: "empty pattern".into(),
                });
            }
            if exact.insert(norm.clone(), list.len()).is_some() {
                return Err(CorpusError::DuplicatePattern(norm));
            }
            list.push((norm, class));
        }
        Ok(OperatorMapping {
            entries: list,
            exact,
        })
    }

    /// Parses `pattern<TAB>class` lines; blank lines and `#` comments are ignored.
    pub fn parse_tsv(text: &str) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (pattern, class) = line.split_once('\t').ok_or_else(|| CorpusError::MappingSyntax {
                line: line_no,
                reason: "expected pattern<TAB>class".into(),
            })?;
            let class = class.parse::<OperatorClass>().map_err(|_| CorpusError::MappingSyntax {
                line: line_no,
                reason: format!("unknown class {:?}", class.trim()),
            })?;
            if pattern.trim().is_empty() {
                return Err(CorpusError::MappingSyntax {
                    line: line_no,
                    reason: "empty pattern".into(),
                });
            }
            entries.push((pattern.to_string(), class));
        }
        Self::new(entries)
    }

    /// The mapping bundled with the crate.
    pub fn starter() -> Self {
        Self::parse_tsv(STARTER_MAPPING).expect("bundled mapping is valid")
    }

    pub fn entries(&self) -> &[(String, OperatorClass)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Class for an operator string, or `None` if nothing matches.
    pub fn classify(&self, operator: &str) -> Option<OperatorClass> {
        let norm = normalize_operator(operator);
        if let Some(&i) = self.exact.get(&norm) {
            return Some(self.entries[i].1);
        }
        // Longest whole-word pattern; ties by class code, then file order.
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, (p, _))| contains_word(&norm, p))
            .min_by_key(|(i, (p, c))| (std::cmp::Reverse(p.chars().count()), c.code(), *i))
            .map(|(_, (_, c))| *c)
    }
}

/// True if `pattern` occurs in `text` with no alphanumeric character
/// immediately on either side.
fn contains_word(text: &str, pattern: &str) -> bool {
    text.match_indices(pattern).any(|(start, m)| {
        let before = text[..start].chars().next_back();
        let after = text[start + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

pub fn annotate(record: &RawRecord, mapping: &OperatorMapping) -> Result<LabeledRecord, CorpusError> {
    mapping
        .classify(&record.operator)
        .map(|class| LabeledRecord::new(class, record.summary.clone()))
        .ok_or_else(|| CorpusError::UnmappedOperator(record.operator.clone()))
}

/// Operators that matched no pattern, with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnmappedAudit {
    counts: HashMap<String, usize>,
    order: Vec<String>,
}

impl UnmappedAudit {
    pub fn record(&mut self, operator: &str) {
        let key = normalize_operator(operator);
        match self.counts.get_mut(&key) {
            Some(c) => *c += 1,
            None => {
                self.counts.insert(key.clone(), 1);
                self.order.push(key);
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Distinct operators.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Entries sorted by descending count, then first appearance.
    pub fn entries(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<(usize, &str, usize)> = self
            .order
            .iter()
            .enumerate()
            .map(|(i, k)| (i, k.as_str(), self.counts[k]))
            .collect();
        v.sort_by_key(|&(i, _, c)| (std::cmp::Reverse(c), i));
        v.into_iter().map(|(_, k, c)| (k, c)).collect()
    }

    /// CSV with header `operator,count`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_csv_row(w, &["operator", "count"])?;
        for (op, count) in self.entries() {
            write_csv_row(w, &[op.to_string(), count.to_string()])?;
        }
        Ok(())
    }
}

/// Annotates every record, collecting misses instead of failing.
pub fn annotate_all(records: &[RawRecord], mapping: &OperatorMapping) -> (Vec<LabeledRecord>, UnmappedAudit) {
    let mut labeled = Vec::with_capacity(records.len());
    let mut audit = UnmappedAudit::default();
    for r in records {
        match annotate(r, mapping) {
            Ok(l) => labeled.push(l),
            Err(_) => audit.record(&r.operator),
        }
    }
    (labeled, audit)
}
