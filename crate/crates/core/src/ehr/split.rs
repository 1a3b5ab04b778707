use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::Dataset;
use crate::error::{Error, Result};

/// Patient-level split into `(train, validation, test)`.
///
/// Train and validation sizes are floored; the test split takes whatever
/// remains. Records keep their original relative order inside each split.
pub fn split_dataset(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = ratios;
    let sum = tr + va + te;
    if (sum - 1.0).abs() > 1e-9 || tr < 0.0 || va < 0.0 || te < 0.0 {
        return Err(Error::BadRatios(sum));
    }
    let n = ds.len();
    let n_train = (tr * n as f64).floor() as usize;
    let n_val = ((va * n as f64).floor() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: &[usize]| {
        let mut idx = range.to_vec();
        idx.sort_unstable();
        ds.with_records(idx.into_iter().map(|i| ds.records[i].clone()).collect())
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::types::{PatientRecord, Visit};
    use std::collections::HashSet;

    fn dataset(n: usize) -> Dataset {
        let ts = chrono::NaiveDate::from_ymd_opt(2100, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let base = Dataset::from_raw(
            vec![("x".into(), vec![(ts, vec!["486".into()]), (ts, vec!["486".into()])])],
            4,
        )
        .unwrap();
        base.with_records(
            (0..n)
                .map(|i| PatientRecord {
                    patient_id: format!("p{i}"),
                    visits: vec![Visit::new(vec![0], ts), Visit::new(vec![0], ts)],
                })
                .collect(),
        )
    }

    #[test]
    fn ten_patients_split_8_1_1() {
        let (a, b, c) = split_dataset(&dataset(10), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    }

    #[test]
    fn cohort_sized_split() {
        let (a, b, c) = split_dataset(&dataset(7493), (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (5994, 749, 750));
    }

    #[test]
    fn deterministic_partition() {
        let ds = dataset(57);
        let first = split_dataset(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        let second = split_dataset(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(first, second);
        let ids = |d: &Dataset| d.records.iter().map(|r| r.patient_id.clone()).collect::<HashSet<_>>();
        let (a, b, c) = (ids(&first.0), ids(&first.1), ids(&first.2));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len() + b.len() + c.len(), 57);
        let all: HashSet<_> = a.union(&b).chain(c.iter()).cloned().collect();
        assert_eq!(all, ids(&ds));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        assert!(matches!(
            split_dataset(&dataset(4), (0.8, 0.1, 0.2), 0),
            Err(Error::BadRatios(_))
        ));
    }
}
