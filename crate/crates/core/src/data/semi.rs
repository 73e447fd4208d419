use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of samples drawn from a class of `class_size` at `fraction`.
pub fn stratified_count(class_size: usize, fraction: f64) -> usize {
    ((fraction * class_size as f64).round() as usize).clamp(1, class_size)
}

/// Stratified label-fraction subset: `round(fraction * n_c)` indices per class,
/// at least one, drawn deterministically from `seed`. Returned indices are sorted.
pub fn semi_subset(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("fraction", format!("must lie in (0, 1], got {fraction}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (_, mut members) in by_class {
        let take = stratified_count(members.len(), fraction);
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..take]);
    }
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(labels: &[usize], idx: &[usize]) -> BTreeMap<usize, usize> {
        let mut c = BTreeMap::new();
        for &i in idx {
            *c.entry(labels[i]).or_insert(0) += 1;
        }
        c
    }

    #[test]
    fn ten_classes_ten_percent() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let idx = semi_subset(&labels, 0.10, 3).unwrap();
        assert_eq!(idx.len(), 100);
        assert!(counts(&labels, &idx).values().all(|&c| c == 10));
    }

    #[test]
    fn deterministic_under_seed() {
        let labels: Vec<usize> = (0..300).map(|i| i % 7).collect();
        assert_eq!(semi_subset(&labels, 0.05, 11).unwrap(), semi_subset(&labels, 0.05, 11).unwrap());
        assert_ne!(semi_subset(&labels, 0.5, 11).unwrap(), semi_subset(&labels, 0.5, 12).unwrap());
    }

    #[test]
    fn minimum_one_per_class() {
        // class 0 has 40 samples, class 1 has 400
        let mut labels = vec![0; 40];
        labels.extend(vec![1; 400]);
        let idx = semi_subset(&labels, 0.01, 0).unwrap();
        let c = counts(&labels, &idx);
        // counting oracle: 0.01 * 40 = 0.4 rounds to 0, floored up to 1; 0.01 * 400 = 4
        assert_eq!(c[&0], 1);
        assert_eq!(c[&1], 4);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(semi_subset(&[0, 1], 0.0, 0).is_err());
        assert!(semi_subset(&[0, 1], 1.5, 0).is_err());
        assert!(semi_subset(&[0, 1], f64::NAN, 0).is_err());
    }

    proptest! {
        #[test]
        fn proportions_within_one_over_class_size(
            sizes in proptest::collection::vec(1usize..60, 1..6),
            fraction in 0.01f64..=1.0,
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let idx = semi_subset(&labels, fraction, seed).unwrap();
            let c = counts(&labels, &idx);
            for (class, &n) in sizes.iter().enumerate() {
                let got = c[&class] as f64 / n as f64;
                // the minimum-one rule can exceed the fraction by up to one sample
                prop_assert!((got - fraction).abs() <= 1.0 / n as f64 + 1e-12);
            }
        }
    }
}
