use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, ScanRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SubjectSplit {
    pub fn is_train(&self, subject_id: &str) -> bool {
        self.train.binary_search_by(|s| s.as_str().cmp(subject_id)).is_ok()
    }

    pub fn is_test(&self, subject_id: &str) -> bool {
        self.test.binary_search_by(|s| s.as_str().cmp(subject_id)).is_ok()
    }
}

/// Stratified subject-wise split. Each class contributes
/// `round(n · train_fraction)` subjects to training, clamped so both sides
/// keep at least one. Both lists are returned sorted.
pub fn subject_split(records: &[ScanRecord], train_fraction: f64, seed: u64) -> Result<SubjectSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut by_class: [BTreeMap<&str, ()>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for r in records {
        by_class[usize::from(r.label.min(1))].insert(&r.subject_id, ());
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, subjects) in by_class.iter().enumerate() {
        let n = subjects.len();
        if n < 2 {
            return Err(Error::Data(format!("class {label} has {n} subject(s); at least 2 are needed to split")));
        }
        let mut ids: Vec<&str> = subjects.keys().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label as u64));
        ids.shuffle(&mut rng);
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        test.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    train.sort();
    test.sort();
    Ok(SubjectSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cohort(per_class: usize) -> Vec<ScanRecord> {
        (0..2 * per_class)
            .flat_map(|i| {
                (0..2).map(move |t| ScanRecord {
                    subject_id: format!("s{i:02}"),
                    t_years: t as f64,
                    label: (i % 2) as u8,
                    volume_path: "x".into(),
                })
            })
            .collect()
    }

    #[test]
    fn ten_subjects_split_eight_two_stratified() {
        let recs = cohort(5);
        let s = subject_split(&recs, 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        let labels: Vec<u8> = s.test.iter().map(|id| recs.iter().find(|r| &r.subject_id == id).unwrap().label).collect();
        assert!(labels.contains(&0) && labels.contains(&1));
    }

    #[test]
    fn same_seed_same_split() {
        let recs = cohort(6);
        assert_eq!(subject_split(&recs, 0.8, 9).unwrap(), subject_split(&recs, 0.8, 9).unwrap());
    }

    #[test]
    fn tiny_class_rejected() {
        let mut recs = cohort(2);
        recs.retain(|r| r.label == 0 || r.subject_id == "s01");
        assert!(subject_split(&recs, 0.8, 0).is_err());
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_complete(per_class in 2usize..12, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let recs = cohort(per_class);
            let s = subject_split(&recs, frac, seed).unwrap();
            for id in &s.train {
                prop_assert!(!s.is_test(id));
            }
            let mut all: Vec<String> = s.train.iter().chain(&s.test).cloned().collect();
            all.sort();
            let mut expect: Vec<String> = recs.iter().map(|r| r.subject_id.clone()).collect();
            expect.sort();
            expect.dedup();
            prop_assert_eq!(all, expect);
        }
    }
}
