use std::sync::atomic::{AtomicUsize, Ordering};

use super::{CorpusError, LabeledRecord, OperatorClass};
use crate::numerics::XorShiftRng;

pub const MIN_SPLIT_RECORDS: usize = 10;

/// Train/validation/test partition of a labeled corpus.
///
/// Reads of the test part through [`SplitDataset::test`] are counted so that
/// callers can assert training never touched it.
#[derive(Debug)]
pub struct SplitDataset {
    train: Vec<LabeledRecord>,
    validation: Vec<LabeledRecord>,
    test: Vec<LabeledRecord>,
    seed: u64,
    test_reads: AtomicUsize,
}

impl Clone for SplitDataset {
    fn clone(&self) -> Self {
        SplitDataset::from_parts(self.train.clone(), self.validation.clone(), self.test.clone(), self.seed)
    }
}

impl PartialEq for SplitDataset {
    fn eq(&self, other: &Self) -> bool {
        self.train == other.train
            && self.validation == other.validation
            && self.test == other.test
            && self.seed == other.seed
    }
}

impl SplitDataset {
    pub fn from_parts(
        train: Vec<LabeledRecord>,
        validation: Vec<LabeledRecord>,
        test: Vec<LabeledRecord>,
        seed: u64,
    ) -> Self {
        SplitDataset {
            train,
            validation,
            test,
            seed,
            test_reads: AtomicUsize::new(0),
        }
    }

    pub fn train(&self) -> &[LabeledRecord] {
        &self.train
    }

    pub fn validation(&self) -> &[LabeledRecord] {
        &self.validation
    }

    pub fn test(&self) -> &[LabeledRecord] {
        self.test_reads.fetch_add(1, Ordering::Relaxed);
        &self.test
    }

    /// Number of times [`SplitDataset::test`] has been called.
    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::Relaxed)
    }

    /// Test part length without counting as a read.
    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// `(train, validation)` sizes for `n` records; the rest goes to test.
fn part_sizes(n: usize) -> (usize, usize) {
    (n * 8 / 10, n / 10)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    XorShiftRng::new(seed).shuffle(&mut idx);
    idx
}

/// Seeded 80/10/10 split: `floor(0.8N)` train, `floor(0.1N)` validation,
/// remainder test.
pub fn split_dataset(records: &[LabeledRecord], seed: u64) -> Result<SplitDataset, CorpusError> {
    let n = records.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(CorpusError::TooFewRecords {
            min: MIN_SPLIT_RECORDS,
            got: n,
        });
    }
    let order = shuffled_indices(n, seed);
    let (n_train, n_val) = part_sizes(n);
    let take = |range: &[usize]| range.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(SplitDataset::from_parts(
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
        seed,
    ))
}

/// Like [`split_dataset`] but applies the floor rule within each class, so
/// part sizes can differ slightly from the unstratified ones.
pub fn split_dataset_stratified(records: &[LabeledRecord], seed: u64) -> Result<SplitDataset, CorpusError> {
    let n = records.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(CorpusError::TooFewRecords {
            min: MIN_SPLIT_RECORDS,
            got: n,
        });
    }
    let order = shuffled_indices(n, seed);
    // (shuffled position, record index) per part
    let mut parts: [Vec<(usize, usize)>; 3] = Default::default();
    for class in OperatorClass::ALL {
        let members: Vec<(usize, usize)> = order
            .iter()
            .enumerate()
            .filter(|(_, &i)| records[i].class == class)
            .map(|(pos, &i)| (pos, i))
            .collect();
        let (n_train, n_val) = part_sizes(members.len());
        parts[0].extend_from_slice(&members[..n_train]);
        parts[1].extend_from_slice(&members[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&members[n_train + n_val..]);
    }
    let [train, validation, test] = parts.map(|mut p| {
        p.sort_unstable();
        p.into_iter().map(|(_, i)| records[i].clone()).collect::<Vec<_>>()
    });
    Ok(SplitDataset::from_parts(train, validation, test, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(n: usize) -> Vec<LabeledRecord> {
        (0..n)
            .map(|i| LabeledRecord::new(OperatorClass::from_code(i % 3).unwrap(), format!("doc {i}")))
            .collect()
    }

    fn sorted(mut v: Vec<LabeledRecord>) -> Vec<LabeledRecord> {
        v.sort_by(|a, b| a.summary.cmp(&b.summary));
        v
    }

    #[test]
    fn ten_records() {
        for seed in [0, 1, 99] {
            assert_eq!(split_dataset(&corpus(10), seed).unwrap().sizes(), (8, 1, 1));
        }
    }

    #[test]
    fn full_corpus_sizes() {
        assert_eq!(split_dataset(&corpus(4863), 5).unwrap().sizes(), (3890, 486, 487));
    }

    #[test]
    fn deterministic() {
        let c = corpus(57);
        assert_eq!(split_dataset(&c, 3).unwrap(), split_dataset(&c, 3).unwrap());
        assert_ne!(split_dataset(&c, 3).unwrap(), split_dataset(&c, 4).unwrap());
    }

    #[test]
    fn too_few() {
        assert!(matches!(
            split_dataset(&corpus(9), 0),
            Err(CorpusError::TooFewRecords { got: 9, .. })
        ));
    }

    #[test]
    fn stratified_keeps_class_ratios() {
        let s = split_dataset_stratified(&corpus(300), 2).unwrap();
        for class in OperatorClass::ALL {
            let count = |p: &[LabeledRecord]| p.iter().filter(|r| r.class == class).count();
            assert_eq!(count(s.train()), 80);
            assert_eq!(count(s.validation()), 10);
            assert_eq!(count(s.test()), 10);
        }
    }

    proptest! {
        #[test]
        fn partition(n in 10usize..200, seed: u64, stratify: bool) {
            let c = corpus(n);
            let s = if stratify {
                split_dataset_stratified(&c, seed).unwrap()
            } else {
                split_dataset(&c, seed).unwrap()
            };
            let mut all = s.train().to_vec();
            all.extend_from_slice(s.validation());
            all.extend_from_slice(s.test());
            prop_assert_eq!(sorted(all), sorted(c));
            if !stratify {
                prop_assert_eq!(s.sizes(), (n * 8 / 10, n / 10, n - n * 8 / 10 - n / 10));
            }
        }
    }
}
