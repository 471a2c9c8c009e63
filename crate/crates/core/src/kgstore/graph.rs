use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{KalmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// Name plus free-text description of an entity or relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Described {
    pub name: String,
    pub description: String,
}

impl Described {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
        }
    }

    /// The description, or the name when the description is blank.
    pub fn text(&self) -> &str {
        if self.description.trim().is_empty() {
            &self.name
        } else {
            &self.description
        }
    }
}

/// Entities, typed relation triples and their textual descriptions.
///
/// `adjacency(i, j)` holds relation `k` exactly when `(i, k, j)` is a triple.
/// Pairs linked by several relations map to all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: BTreeMap<EntityId, Described>,
    relations: BTreeMap<RelationId, Described>,
    triples: Vec<Triple>,
    adjacency: BTreeMap<(EntityId, EntityId), BTreeSet<RelationId>>,
    neighbors: BTreeMap<EntityId, BTreeSet<EntityId>>,
    index: BTreeMap<EntityId, usize>,
}

fn check_text(kind: &str, id: u32, d: &Described) -> Result<()> {
    let bad = |s: &str| s.contains(['\t', '\n', '\r']);
    if d.name.trim().is_empty() {
        return Err(KalmError::Input(format!("{kind} {id} has an empty name")));
    }
    if bad(&d.name) || bad(&d.description) {
        return Err(KalmError::Input(format!(
            "{kind} {id} text contains a tab or newline"
        )));
    }
    Ok(())
}

impl KnowledgeGraph {
    /// Validates and indexes a graph. Duplicate triples are dropped.
    pub fn new(
        entities: BTreeMap<EntityId, Described>,
        relations: BTreeMap<RelationId, Described>,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        for (id, d) in &entities {
            check_text("entity", id.0, d)?;
        }
        for (id, d) in &relations {
            check_text("relation", id.0, d)?;
        }
        let triples: BTreeSet<Triple> = triples.into_iter().collect();
        let mut adjacency: BTreeMap<(EntityId, EntityId), BTreeSet<RelationId>> = BTreeMap::new();
        let mut neighbors: BTreeMap<EntityId, BTreeSet<EntityId>> =
            entities.keys().map(|&e| (e, BTreeSet::new())).collect();
        for t in &triples {
            if !entities.contains_key(&t.head) {
                return Err(KalmError::Input(format!("triple {t:?} has unknown head")));
            }
            if !entities.contains_key(&t.tail) {
                return Err(KalmError::Input(format!("triple {t:?} has unknown tail")));
            }
            if !relations.contains_key(&t.relation) {
                return Err(KalmError::Input(format!("triple {t:?} has unknown relation")));
            }
            adjacency
                .entry((t.head, t.tail))
                .or_default()
                .insert(t.relation);
            if t.head != t.tail {
                neighbors.get_mut(&t.head).expect("checked").insert(t.tail);
                neighbors.get_mut(&t.tail).expect("checked").insert(t.head);
            }
        }
        let index = entities.keys().enumerate().map(|(i, &e)| (e, i)).collect();
        Ok(Self {
            entities,
            relations,
            triples: triples.into_iter().collect(),
            adjacency,
            neighbors,
            index,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityId, &Described)> {
        self.entities.iter().map(|(k, v)| (*k, v))
    }

    pub fn relations(&self) -> impl Iterator<Item = (RelationId, &Described)> {
        self.relations.iter().map(|(k, v)| (*k, v))
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entities.keys().copied()
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.relations.keys().copied()
    }

    pub fn has_entity(&self, e: EntityId) -> bool {
        self.entities.contains_key(&e)
    }

    pub fn entity(&self, e: EntityId) -> Option<&Described> {
        self.entities.get(&e)
    }

    pub fn relation(&self, r: RelationId) -> Option<&Described> {
        self.relations.get(&r)
    }

    /// Dense row index of an entity (ascending id order).
    pub fn entity_index(&self, e: EntityId) -> Option<usize> {
        self.index.get(&e).copied()
    }

    /// Relations `k` with `(i, k, j)` in the graph.
    pub fn adjacency(&self, i: EntityId, j: EntityId) -> Option<&BTreeSet<RelationId>> {
        self.adjacency.get(&(i, j))
    }

    /// Undirected neighbors.
    pub fn neighbors(&self, e: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.neighbors.get(&e).into_iter().flatten().copied()
    }
}
