use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metric_fields;
use crate::contexts::ContextBundle;
use crate::error::{KalmError, Result};
use crate::model::{train, Metrics, Split, TrainConfig};
use crate::numcore::mix;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub n_train: usize,
    pub metrics: Metrics,
}

/// Stratified subsample keeping `floor(fraction·n_c)` training documents of
/// each class. Per-class orders are fixed by `seed`, so smaller fractions are
/// prefixes of larger ones; `fraction = 1` returns `train` unchanged.
pub fn subsample_train(bundles: &[ContextBundle], train: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(KalmError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(train.to_vec());
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in train {
        let b = bundles
            .get(i)
            .ok_or_else(|| KalmError::Input(format!("document index {i} out of range")))?;
        by_class.entry(b.label).or_default().push(i);
    }
    let mut out = Vec::new();
    for (class, mut idx) in by_class {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(0x5eed ^ class as u64)));
        idx.shuffle(&mut rng);
        let keep = (fraction * idx.len() as f64 + 1e-9).floor() as usize;
        if keep == 0 {
            return Err(KalmError::Config(format!(
                "fraction {fraction} leaves class {class} with no training documents ({} available)",
                idx.len()
            )));
        }
        out.extend(&idx[..keep]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Retrains on each fraction of the training split (ascending) and reports
/// test metrics. Validation and test splits stay fixed.
pub fn efficiency_sweep(
    bundles: &[ContextBundle],
    split: &Split,
    cfg: &TrainConfig,
    n_classes: usize,
    fractions: &[f64],
) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() {
        return Err(KalmError::Config("no sweep fractions given".into()));
    }
    let mut sorted = fractions.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut rows = Vec::with_capacity(sorted.len());
    for fraction in sorted {
        let sub = subsample_train(bundles, &split.train, fraction, cfg.seed)?;
        let part = Split {
            train: sub,
            val: split.val.clone(),
            test: split.test.clone(),
        };
        log::info!("sweep fraction {fraction}: {} training documents", part.train.len());
        let outcome = train(bundles, &part, cfg, n_classes, None)?;
        rows.push(SweepRow {
            fraction,
            n_train: part.train.len(),
            metrics: outcome.test.metrics,
        });
    }
    Ok(rows)
}

/// Test metrics of always predicting the most frequent training label
/// (ties to the lowest class).
pub fn majority_baseline(bundles: &[ContextBundle], split: &Split, n_classes: usize) -> Result<Metrics> {
    let mut counts = vec![0usize; n_classes];
    for &i in &split.train {
        let y = bundles[i].label;
        if y >= n_classes {
            return Err(KalmError::Input(format!("label {y} outside 0..{n_classes}")));
        }
        counts[y] += 1;
    }
    let mut majority = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[majority] {
            majority = c;
        }
    }
    let labels: Vec<usize> = split.test.iter().map(|&i| bundles[i].label).collect();
    Metrics::from_predictions(&labels, &vec![majority; labels.len()], n_classes)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction,n_train,acc,bacc,maf,mif,map,mar\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.fraction, r.n_train, metric_fields(&r.metrics));
    }
    out
}
