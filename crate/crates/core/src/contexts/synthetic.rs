//! Synthetic corpus whose labels depend on KG structure and on paragraph
//! coreference.
//!
//! The KG is a forest of stars: `n_classes` hubs, each with several gate
//! entities (`gate -r(2h)-> hub`), each gate with its own members
//! (`member -r(2h+1)-> gate`). Documents mention only members of one hub, so
//! exactly one hub lies within two hops of the mentions. A document's label is
//! `(hub + s) mod n_classes`, where `s = 1` iff at least two paragraph pairs
//! share an entity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::document::{DocumentRecord, Paragraph};
use crate::error::{KalmError, Result};
use crate::kgstore::{Described, EntityId, KnowledgeGraph, RelationId, Triple};

const FILLER_VOCAB: usize = 30;
const DESCRIPTION_VOCAB: usize = 300;
const MIN_MEMBERS_PER_GATE: usize = 12;
/// Probability that a document's paragraphs corefer, for even and odd labels.
/// Unequal rates give each signal some marginal correlation with the label.
const COREF_RATE: [f64; 2] = [0.1, 0.5];

/// Sharing-pair count at or above which the coreference bit is set.
pub const SHARING_THRESHOLD: usize = 2;

pub fn hub_name(h: usize) -> String {
    format!("hub{h}")
}

pub fn generate_synthetic_corpus(
    seed: u64,
    n_docs: usize,
    kg_size: usize,
    n_classes: usize,
) -> Result<(KnowledgeGraph, Vec<DocumentRecord>)> {
    if n_classes < 2 || n_docs < n_classes {
        return Err(KalmError::Config(format!(
            "need n_docs >= n_classes >= 2, got n_docs={n_docs} n_classes={n_classes}"
        )));
    }
    let rest = kg_size.saturating_sub(n_classes);
    let n_gates = n_classes.max(rest / 16);
    if kg_size < n_classes || rest < n_gates || (rest - n_gates) / n_gates < MIN_MEMBERS_PER_GATE {
        return Err(KalmError::Config(format!(
            "kg_size={kg_size} too small for {n_classes} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let description = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(3..=6);
        (0..len)
            .map(|_| format!("k{}", rng.random_range(0..DESCRIPTION_VOCAB)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut entities = BTreeMap::new();
    let mut triples = Vec::new();
    let mut gates_of: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    let mut members_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for h in 0..n_classes {
        entities.insert(EntityId(h as u32), Described::new(hub_name(h), description(&mut rng)));
    }
    for g in 0..n_gates {
        let id = n_classes + g;
        let hub = g % n_classes;
        gates_of[hub].push(id);
        entities.insert(EntityId(id as u32), Described::new(format!("e{id}"), description(&mut rng)));
        triples.push(Triple::new(id as u32, (2 * hub) as u32, hub as u32));
    }
    for m in 0..rest - n_gates {
        let id = n_classes + n_gates + m;
        let gate = n_classes + m % n_gates;
        let hub = (gate - n_classes) % n_classes;
        members_of.entry(gate).or_default().push(id);
        entities.insert(EntityId(id as u32), Described::new(format!("e{id}"), description(&mut rng)));
        triples.push(Triple::new(id as u32, (2 * hub + 1) as u32, gate as u32));
    }
    let relations = (0..2 * n_classes)
        .map(|r| {
            let what = if r % 2 == 0 { "belongs to" } else { "part of" };
            (RelationId(r as u32), Described::new(format!("r{r}"), what))
        })
        .collect();
    let kg = KnowledgeGraph::new(entities, relations, triples)?;

    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let label = i % n_classes;
        let s = usize::from(rng.random_bool(COREF_RATE[label % 2]));
        let hub = (label + n_classes - s) % n_classes;
        let n_par = rng.random_range(3..=6usize);
        let n_pick = rng.random_range(1..=2usize).min(gates_of[hub].len());
        let gates: Vec<usize> = gates_of[hub].choose_multiple(&mut rng, n_pick).copied().collect();
        let mut pool: Vec<usize> = gates.iter().flat_map(|g| members_of[g].iter().copied()).collect();
        pool.shuffle(&mut rng);

        let mut mentions: Vec<Vec<usize>> = Vec::with_capacity(n_par);
        if s == 0 {
            for _ in 0..n_par {
                mentions.push((0..2).filter_map(|_| pool.pop()).collect());
            }
        } else {
            let common = [pool.pop().expect("gate has members"), pool.pop().expect("gate has members")];
            for _ in 0..n_par {
                let mut m = common.to_vec();
                m.shuffle(&mut rng);
                mentions.push(m);
            }
        }

        let paragraphs = mentions
            .into_iter()
            .map(|ms| {
                let n_fill = rng.random_range(6..=12usize);
                let mut tokens: Vec<String> = (0..n_fill)
                    .map(|_| format!("w{}", rng.random_range(0..FILLER_VOCAB)))
                    .collect();
                for &m in &ms {
                    let at = rng.random_range(0..=tokens.len());
                    tokens.insert(at, format!("e{m}"));
                }
                Paragraph {
                    tokens,
                    mentions: ms.into_iter().map(|m| EntityId(m as u32)).collect(),
                }
            })
            .collect();
        docs.push(DocumentRecord {
            doc_id: format!("doc{i:05}"),
            label,
            paragraphs,
        });
    }
    Ok((kg, docs))
}

/// Hub entities (by name) of a generated KG, indexed by hub number.
pub fn hub_entities(kg: &KnowledgeGraph) -> Vec<EntityId> {
    let by_name: BTreeMap<&str, EntityId> = kg.entities().map(|(id, d)| (d.name.as_str(), id)).collect();
    (0..)
        .map_while(|h| by_name.get(hub_name(h).as_str()).copied())
        .collect()
}

/// Number of unordered paragraph pairs sharing a mention, by direct comparison.
pub fn shared_pairs(doc: &DocumentRecord) -> usize {
    let sets: Vec<BTreeSet<EntityId>> = doc
        .paragraphs
        .iter()
        .map(|p| p.mentions.iter().copied().collect())
        .collect();
    let mut n = 0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if !sets[i].is_disjoint(&sets[j]) {
                n += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contexts::corpus_to_jsonl;
    use crate::kgstore::khop_neighborhood;

    #[test]
    fn fixed_seed_is_deterministic() {
        let (kg1, d1) = generate_synthetic_corpus(5, 40, 120, 2).unwrap();
        let (kg2, d2) = generate_synthetic_corpus(5, 40, 120, 2).unwrap();
        assert_eq!(corpus_to_jsonl(&d1), corpus_to_jsonl(&d2));
        assert_eq!(kg1.triples(), kg2.triples());
        let (_, d3) = generate_synthetic_corpus(6, 40, 120, 2).unwrap();
        assert_ne!(corpus_to_jsonl(&d1), corpus_to_jsonl(&d3));
    }

    #[test]
    fn labels_follow_the_structural_rule() {
        for (classes, size) in [(2, 200), (3, 300)] {
            let (kg, docs) = generate_synthetic_corpus(11, 90, size, classes).unwrap();
            let hubs = hub_entities(&kg);
            assert_eq!(hubs.len(), classes);
            for d in &docs {
                let hood = khop_neighborhood(&kg, &d.mentioned_entities(), 2).unwrap();
                let reached: Vec<usize> = (0..classes).filter(|&h| hood.entities.contains(&hubs[h])).collect();
                assert_eq!(reached.len(), 1, "{}", d.doc_id);
                let bit = usize::from(shared_pairs(d) >= SHARING_THRESHOLD);
                assert_eq!(d.label, (reached[0] + bit) % classes, "{}", d.doc_id);
            }
        }
    }

    #[test]
    fn class_histogram_is_balanced() {
        let (_, docs) = generate_synthetic_corpus(1, 100, 200, 2).unwrap();
        let mut counts = [0usize; 2];
        for d in &docs {
            counts[d.label] += 1;
        }
        for c in counts {
            assert!((c as f64 - 50.0).abs() <= 5.0, "{counts:?}");
        }
    }

    #[test]
    fn infeasible_sizes_rejected() {
        assert!(generate_synthetic_corpus(0, 10, 200, 1).is_err());
        assert!(generate_synthetic_corpus(0, 1, 200, 2).is_err());
        assert!(generate_synthetic_corpus(0, 10, 20, 2).is_err());
    }
}
