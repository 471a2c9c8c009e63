use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::KnowledgeGraph;
use super::table::EmbeddingTable;
use crate::error::{KalmError, Result};
use crate::numcore::Tensor;

/// TransE hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            margin: 1.0,
            epochs: 500,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Trained table plus the mean margin loss of every epoch.
#[derive(Debug, Clone)]
pub struct TransEOutcome {
    pub table: EmbeddingTable,
    pub epoch_loss: Vec<f64>,
}

/// Learns translation embeddings with the margin ranking objective
/// `max(0, margin + ||h + r - t|| - ||h' + r - t'||)`, one uniformly corrupted
/// head or tail per positive triple, plain SGD and per-epoch entity
/// renormalization. The returned table is frozen.
pub fn train_transe(kg: &KnowledgeGraph, cfg: &TransEConfig) -> Result<EmbeddingTable> {
    Ok(train_transe_logged(kg, cfg)?.table)
}

pub fn train_transe_logged(kg: &KnowledgeGraph, cfg: &TransEConfig) -> Result<TransEOutcome> {
    if kg.triples().is_empty() {
        return Err(KalmError::Input("TransE needs at least one triple".into()));
    }
    if cfg.dim < 2 {
        return Err(KalmError::Input(format!("TransE dim must be >= 2, got {}", cfg.dim)));
    }
    let dim = cfg.dim;
    let n_ent = kg.entity_count();
    let rel_ids: Vec<_> = kg.relation_ids().collect();
    let rel_index = |r| rel_ids.binary_search(&r).expect("triples reference known relations");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 6.0 / (dim as f64).sqrt();
    let mut ent: Vec<f64> = (0..n_ent * dim).map(|_| rng.random_range(-bound..bound)).collect();
    let mut rel: Vec<f64> = (0..rel_ids.len() * dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    normalize_rows(&mut rel, dim);
    normalize_rows(&mut ent, dim);

    let triples: Vec<(usize, usize, usize)> = kg
        .triples()
        .iter()
        .map(|t| {
            (
                kg.entity_index(t.head).expect("validated"),
                rel_index(t.relation),
                kg.entity_index(t.tail).expect("validated"),
            )
        })
        .collect();

    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut pos = vec![0.0; dim];
    let mut neg = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &ti in &order {
            let (h, r, t) = triples[ti];
            let (nh, nt) = corrupt(&mut rng, h, t, n_ent);
            for k in 0..dim {
                pos[k] = ent[h * dim + k] + rel[r * dim + k] - ent[t * dim + k];
                neg[k] = ent[nh * dim + k] + rel[r * dim + k] - ent[nt * dim + k];
            }
            let dp = norm(&pos);
            let dn = norm(&neg);
            let loss = cfg.margin + dp - dn;
            if loss <= 0.0 {
                continue;
            }
            total += loss;
            let sp = if dp > 1e-12 { cfg.lr / dp } else { 0.0 };
            let sn = if dn > 1e-12 { cfg.lr / dn } else { 0.0 };
            for k in 0..dim {
                let u = pos[k] * sp;
                let w = neg[k] * sn;
                ent[h * dim + k] -= u;
                ent[t * dim + k] += u;
                rel[r * dim + k] -= u - w;
                ent[nh * dim + k] += w;
                ent[nt * dim + k] -= w;
            }
        }
        normalize_rows(&mut ent, dim);
        epoch_loss.push(total / triples.len() as f64);
    }

    let table = EmbeddingTable::new(
        kg.entity_ids().collect(),
        Tensor::matrix(n_ent, dim, ent)?,
        rel_ids.clone(),
        Tensor::matrix(rel_ids.len(), dim, rel)?,
        true,
    )?;
    Ok(TransEOutcome { table, epoch_loss })
}

/// Replaces head or tail (coin flip) by a different uniformly drawn entity.
fn corrupt(rng: &mut ChaCha8Rng, h: usize, t: usize, n_ent: usize) -> (usize, usize) {
    let replace_head = rng.random_bool(0.5);
    let keep = if replace_head { h } else { t };
    let mut e = rng.random_range(0..n_ent);
    if n_ent > 1 {
        while e == keep {
            e = rng.random_range(0..n_ent);
        }
    }
    if replace_head {
        (e, t)
    } else {
        (h, e)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize_rows(data: &mut [f64], dim: usize) {
    for row in data.chunks_mut(dim) {
        let n = norm(row);
        if n > 0.0 {
            for v in row {
                *v /= n;
            }
        }
    }
}

/// `||h + r - t||` under a table.
pub fn transe_score(table: &EmbeddingTable, t: &super::Triple) -> Option<f64> {
    let h = table.entity_vec(t.head)?;
    let r = table.relation_vec(t.relation)?;
    let tl = table.entity_vec(t.tail)?;
    Some(
        h.iter()
            .zip(r)
            .zip(tl)
            .map(|((a, b), c)| (a + b - c) * (a + b - c))
            .sum::<f64>()
            .sqrt(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgstore::{Described, EntityId, RelationId, Triple};
    use std::collections::BTreeMap;

    fn graph(n: u32, triples: Vec<Triple>, n_rel: u32) -> KnowledgeGraph {
        let entities: BTreeMap<_, _> = (0..n).map(|i| (EntityId(i), Described::new(format!("e{i}"), ""))).collect();
        let relations: BTreeMap<_, _> = (0..n_rel)
            .map(|i| (RelationId(i), Described::new(format!("r{i}"), "")))
            .collect();
        KnowledgeGraph::new(entities, relations, triples).unwrap()
    }

    #[test]
    fn empty_graph_is_rejected() {
        let kg = graph(2, vec![], 1);
        assert!(matches!(train_transe(&kg, &TransEConfig::default()), Err(KalmError::Input(_))));
    }

    #[test]
    fn zero_epochs_gives_normalized_seeded_table() {
        let kg = graph(3, vec![Triple::new(0, 0, 1)], 1);
        let cfg = TransEConfig { dim: 2, epochs: 0, seed: 5, ..Default::default() };
        let a = train_transe(&kg, &cfg).unwrap();
        let b = train_transe(&kg, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.frozen());
        for e in kg.entity_ids() {
            let v = a.entity_vec(e).unwrap();
            assert!((norm(v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_triple_beats_its_corruptions() {
        let kg = graph(2, vec![Triple::new(0, 0, 1)], 1);
        let cfg = TransEConfig { dim: 8, epochs: 200, seed: 1, ..Default::default() };
        let table = train_transe(&kg, &cfg).unwrap();
        let good = transe_score(&table, &Triple::new(0, 0, 1)).unwrap();
        for bad in [Triple::new(0, 0, 0), Triple::new(1, 0, 1)] {
            assert!(good < transe_score(&table, &bad).unwrap());
        }
    }

    #[test]
    fn chain_separates_true_from_corrupted() {
        let triples: Vec<_> = (0..19).map(|i| Triple::new(i, 0, i + 1)).collect();
        let kg = graph(20, triples.clone(), 1);
        let cfg = TransEConfig { dim: 16, epochs: 200, seed: 3, ..Default::default() };
        let out = train_transe_logged(&kg, &cfg).unwrap();
        let true_mean: f64 =
            triples.iter().map(|t| transe_score(&out.table, t).unwrap()).sum::<f64>() / triples.len() as f64;
        // every (h, t) pair that is not a chain edge
        let mut corrupted = Vec::new();
        for h in 0..20 {
            for t in 0..20 {
                if h != t && t != h + 1 {
                    corrupted.push(transe_score(&out.table, &Triple::new(h, 0, t)).unwrap());
                }
            }
        }
        let corrupted_mean = corrupted.iter().sum::<f64>() / corrupted.len() as f64;
        assert!(true_mean < corrupted_mean, "{true_mean} vs {corrupted_mean}");
        let early: f64 = out.epoch_loss[..20].iter().sum();
        let late: f64 = out.epoch_loss[180..].iter().sum();
        assert!(late < early);
        for e in kg.entity_ids() {
            assert!((norm(out.table.entity_vec(e).unwrap()) - 1.0).abs() < 1e-9);
        }
    }
}
