#![allow(dead_code)]

pub mod graphs;

use std::collections::{BTreeMap, BTreeSet};

use kalm::contexts::{build_bundle, ContextBundle, DocEdge, DocEdgeType, DocumentRecord, EmbeddingSource, Paragraph};
use kalm::kgstore::{Described, EntityId, EmbeddingTable, KnowledgeGraph, RelationId, Triple};
use kalm::model::{bundle_config, embed_kg, prepare_synthetic, TrainConfig};

/// Small widths that keep numerical checks fast.
pub fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.kge_dim = 8;
    cfg.d_embed = 16;
    cfg.transe_epochs = 20;
    cfg
}

/// Eight entities; mentioning 0 and 3 with k = 2 gives the subgraph {0, 1, 2, 3, 4}.
pub fn toy_kg() -> KnowledgeGraph {
    let entities: BTreeMap<EntityId, Described> = (0..8)
        .map(|i| (EntityId(i), Described::new(format!("ent{i}"), format!("about thing {i}"))))
        .collect();
    let relations: BTreeMap<RelationId, Described> = (0..2)
        .map(|r| (RelationId(r), Described::new(format!("rel{r}"), "relates to")))
        .collect();
    let triples = [(0, 0, 1), (1, 0, 2), (3, 1, 4), (5, 1, 6), (2, 0, 7)].map(|(h, r, t)| Triple::new(h, r, t));
    KnowledgeGraph::new(entities, relations, triples).unwrap()
}

fn paragraph(text: &str, mentions: &[u32]) -> Paragraph {
    Paragraph {
        tokens: text.split_whitespace().map(String::from).collect(),
        mentions: mentions.iter().copied().map(EntityId).collect(),
    }
}

/// Three paragraphs; 1 and 2 share entity 0.
pub fn toy_doc() -> DocumentRecord {
    DocumentRecord {
        doc_id: "toy".into(),
        label: 1,
        paragraphs: vec![
            paragraph("the ent0 story begins here", &[0]),
            paragraph("more about ent0 and others", &[0]),
            paragraph("finally ent3 appears", &[3]),
        ],
    }
}

pub fn toy_bundle(cfg: &TrainConfig) -> (ContextBundle, EmbeddingTable) {
    let kg = toy_kg();
    let table = embed_kg(&kg, cfg).unwrap();
    let b = build_bundle(&toy_doc(), &kg, &table, &bundle_config(cfg), EmbeddingSource::Hashed).unwrap();
    (b, table)
}

/// Synthetic corpus bundles under `cfg`.
pub fn synthetic_bundles(cfg: &TrainConfig) -> Vec<ContextBundle> {
    prepare_synthetic(cfg).unwrap().bundles
}

/// Document-graph edges by pairwise set intersection: `(src, dst, Some(entity))`
/// for coreference and `(src, dst, None)` for super edges, sorted.
pub fn oracle_doc_edges(doc: &DocumentRecord) -> Vec<(usize, usize, Option<EntityId>)> {
    let sets: Vec<BTreeSet<EntityId>> = doc.paragraphs.iter().map(|p| p.mentions.iter().copied().collect()).collect();
    let mut out = Vec::new();
    for i in 0..sets.len() {
        for j in 0..sets.len() {
            if i != j {
                for &e in sets[i].intersection(&sets[j]) {
                    out.push((i + 1, j + 1, Some(e)));
                }
            }
        }
        out.push((0, i + 1, None));
        out.push((i + 1, 0, None));
    }
    out.sort();
    out
}

pub fn doc_edge_tuples(edges: &[DocEdge]) -> Vec<(usize, usize, Option<EntityId>)> {
    let mut out: Vec<_> = edges
        .iter()
        .map(|e| {
            let k = match e.kind {
                DocEdgeType::Entity(x) => Some(x),
                _ => None,
            };
            (e.src, e.dst, k)
        })
        .collect();
    out.sort();
    out
}

/// Entities within `k` hops by repeated scans of the triple list, one ring at a time.
pub fn oracle_khop(kg: &KnowledgeGraph, seeds: &BTreeSet<EntityId>, k: usize) -> BTreeSet<EntityId> {
    let mut reached = seeds.clone();
    for _ in 0..k {
        let mut next = reached.clone();
        for t in kg.triples() {
            if reached.contains(&t.head) {
                next.insert(t.tail);
            }
            if reached.contains(&t.tail) {
                next.insert(t.head);
            }
        }
        reached = next;
    }
    reached
}
