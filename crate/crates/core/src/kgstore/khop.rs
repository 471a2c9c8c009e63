use std::collections::{BTreeSet, VecDeque};

use super::graph::{EntityId, KnowledgeGraph, Triple};
use crate::error::{KalmError, Result};

/// Entities within `k` undirected hops of the seeds, with the induced triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub entities: BTreeSet<EntityId>,
    pub triples: Vec<Triple>,
}

/// Multi-source breadth-first search bounded at `k` hops. Edges are traversed
/// in both directions; every KG triple with both endpoints inside the result
/// is kept.
pub fn khop_neighborhood(kg: &KnowledgeGraph, seeds: &BTreeSet<EntityId>, k: usize) -> Result<Neighborhood> {
    if let Some(bad) = seeds.iter().find(|&&e| !kg.has_entity(e)) {
        return Err(KalmError::Input(format!("unknown seed entity {bad}")));
    }
    let mut seen: BTreeSet<EntityId> = seeds.clone();
    let mut queue: VecDeque<(EntityId, usize)> = seeds.iter().map(|&e| (e, 0)).collect();
    while let Some((e, depth)) = queue.pop_front() {
        if depth == k {
            continue;
        }
        for n in kg.neighbors(e) {
            if seen.insert(n) {
                queue.push_back((n, depth + 1));
            }
        }
    }
    let triples = kg
        .triples()
        .iter()
        .filter(|t| seen.contains(&t.head) && seen.contains(&t.tail))
        .copied()
        .collect();
    Ok(Neighborhood {
        entities: seen,
        triples,
    })
}
