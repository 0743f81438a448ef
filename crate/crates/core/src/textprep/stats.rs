use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TextprepError;

/// Word-count distribution over documents.
///
/// Serialized as JSON with keys `documents`, `histogram` (word count →
/// document count, keys as strings), `mean`, `median`, `p95`, `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub histogram: BTreeMap<usize, usize>,
    pub mean: f64,
    pub median: usize,
    pub p95: usize,
    pub max: usize,
}

/// Nearest-rank percentile of ascending `sorted`: element `ceil(p·N)`.
fn nearest_rank(sorted: &[usize], p: f64) -> usize {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn word_count_stats<S: AsRef<str>>(corpus: &[S]) -> Result<CorpusStats, TextprepError> {
    if corpus.is_empty() {
        return Err(TextprepError::EmptyCorpus);
    }
    let mut lengths: Vec<usize> = corpus
        .iter()
        .map(|d| d.as_ref().split_whitespace().count())
        .collect();
    let mut histogram = BTreeMap::new();
    for &l in &lengths {
        *histogram.entry(l).or_insert(0) += 1;
    }
    lengths.sort_unstable();
    Ok(CorpusStats {
        documents: lengths.len(),
        histogram,
        mean: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
        median: nearest_rank(&lengths, 0.5),
        p95: nearest_rank(&lengths, 0.95),
        max: *lengths.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_corpus() {
        let s = word_count_stats(&["a b", "c"]).unwrap();
        assert_eq!(s.histogram, BTreeMap::from([(1, 1), (2, 1)]));
        assert_eq!(s.mean, 1.5);
        assert_eq!(s.max, 2);
        assert_eq!(s.median, 1);
    }

    #[test]
    fn nearest_rank_p95() {
        let docs: Vec<String> = [1, 2, 3, 100].iter().map(|&n| vec!["w"; n].join(" ")).collect();
        let s = word_count_stats(&docs).unwrap();
        assert_eq!(s.p95, 100);
        assert_eq!(s.median, 2);
        assert_eq!(s.histogram.values().sum::<usize>(), 4);
    }

    #[test]
    fn empty() {
        let none: [&str; 0] = [];
        assert_eq!(word_count_stats(&none).unwrap_err(), TextprepError::EmptyCorpus);
    }

    #[test]
    fn json_keys() {
        let s = word_count_stats(&["a b", "c"]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["histogram"]["2"], 1);
        let back: CorpusStats = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
