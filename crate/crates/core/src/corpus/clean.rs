use std::collections::HashSet;

use super::RawRecord;

/// Kept records and the number removed for each reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanSummary {
    pub records: Vec<RawRecord>,
    pub dropped_blank: usize,
    pub dropped_duplicate: usize,
}

impl CleanSummary {
    pub fn dropped(&self) -> usize {
        self.dropped_blank + self.dropped_duplicate
    }
}

/// Drops rows with a blank operator or summary, then exact duplicate
/// `(operator, summary)` pairs after the first occurrence.
pub fn clean_records(records: Vec<RawRecord>) -> CleanSummary {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut kept = Vec::with_capacity(records.len());
    let (mut dropped_blank, mut dropped_duplicate) = (0, 0);
    for r in records {
        if r.operator.trim().is_empty() || r.summary.trim().is_empty() {
            dropped_blank += 1;
        } else if !seen.insert((r.operator.clone(), r.summary.clone())) {
            dropped_duplicate += 1;
        } else {
            kept.push(r);
        }
    }
    CleanSummary {
        records: kept,
        dropped_blank,
        dropped_duplicate,
    }
}
