use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KalmError, Result};
use crate::numcore::mix;

/// Document indices of the three splits, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 70/15/15 split stratified by label: within each class the
/// validation and test shares are `round(0.15·n)` each.
pub fn stratified_split(labels: &[usize], seed: u64) -> Result<Split> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut split = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for (class, mut idx) in by_class {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(class as u64 + 1)));
        idx.shuffle(&mut rng);
        let n_hold = (0.15 * idx.len() as f64).round() as usize;
        split.val.extend(&idx[..n_hold]);
        split.test.extend(&idx[n_hold..2 * n_hold]);
        split.train.extend(&idx[2 * n_hold..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            return Err(KalmError::Config(format!("{name} split is empty ({} documents)", labels.len())));
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions_and_disjointness() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let s = stratified_split(&labels, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (68, 16, 16));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(stratified_split(&labels, 3).unwrap(), s);
        assert_ne!(stratified_split(&labels, 4).unwrap(), s);
    }

    #[test]
    fn too_small_is_a_config_error() {
        assert!(matches!(stratified_split(&[0, 1, 0], 0), Err(KalmError::Config(_))));
    }
}
