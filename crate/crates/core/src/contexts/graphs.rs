use std::collections::{BTreeMap, BTreeSet};

use super::document::DocumentRecord;
use crate::error::{KalmError, Result};
use crate::kgstore::{khop_neighborhood, EmbeddingTable, EntityId, KnowledgeGraph, RelationId};
use crate::numcore::Tensor;

/// Document-graph edge label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DocEdgeType {
    /// Both paragraphs mention this entity.
    Entity(EntityId),
    /// Fusion node to paragraph, either direction.
    Super,
    /// Added by the document-graph layer for every node.
    SelfLoop,
}

/// Directed edge; node 0 is the fusion node, node `i` is paragraph `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: DocEdgeType,
}

/// Knowledge-coreference edges: for each entity `k` and each unordered pair of
/// paragraphs mentioning it, `(i, j, k)` and `(j, i, k)`; pairs sharing several
/// entities get one parallel edge per entity. The fusion node is linked to every
/// paragraph in both directions with the super relation.
pub fn build_document_graph(doc: &DocumentRecord) -> Vec<DocEdge> {
    let mut by_entity: BTreeMap<EntityId, BTreeSet<usize>> = BTreeMap::new();
    for (i, p) in doc.paragraphs.iter().enumerate() {
        for &e in &p.mentions {
            by_entity.entry(e).or_default().insert(i + 1);
        }
    }
    let mut edges = Vec::new();
    for (&e, nodes) in &by_entity {
        let nodes: Vec<usize> = nodes.iter().copied().collect();
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                edges.push(DocEdge { src: i, dst: j, kind: DocEdgeType::Entity(e) });
                edges.push(DocEdge { src: j, dst: i, kind: DocEdgeType::Entity(e) });
            }
        }
    }
    for i in 1..=doc.paragraphs.len() {
        edges.push(DocEdge { src: 0, dst: i, kind: DocEdgeType::Super });
        edges.push(DocEdge { src: i, dst: 0, kind: DocEdgeType::Super });
    }
    edges
}

/// Number of unordered paragraph pairs that share at least one entity.
pub fn sharing_pair_count(edges: &[DocEdge]) -> usize {
    edges
        .iter()
        .filter(|e| matches!(e.kind, DocEdgeType::Entity(_)) && e.src < e.dst)
        .map(|e| (e.src, e.dst))
        .collect::<BTreeSet<_>>()
        .len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GlobalEdgeType {
    Kg(RelationId),
    Fusion,
}

/// Directed edge; node 0 is the fusion entity, node `i >= 1` is `entities[i-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: GlobalEdgeType,
}

/// The merged k-hop KG subgraph of a document plus a fusion entity.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSubgraph {
    /// Subgraph entities in ascending id order (rows 1..=S).
    pub entities: Vec<EntityId>,
    pub edges: Vec<GlobalEdge>,
    /// Frozen KGE rows of `entities`; `None` when the subgraph is empty.
    pub features: Option<Tensor>,
}

impl GlobalSubgraph {
    /// Node count including the fusion entity.
    pub fn n_nodes(&self) -> usize {
        self.entities.len() + 1
    }

    /// True when every node is reachable from node 0 (edges taken undirected).
    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds the global context. With no mentions the result holds only the
/// fusion entity and a warning is returned alongside it.
pub fn build_global_subgraph(
    doc: &DocumentRecord,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    k: usize,
) -> Result<(GlobalSubgraph, Option<String>)> {
    let seeds = doc.mentioned_entities();
    if seeds.is_empty() {
        let g = GlobalSubgraph {
            entities: vec![],
            edges: vec![],
            features: None,
        };
        return Ok((g, Some(format!("document {} mentions no entities", doc.doc_id))));
    }
    let hood = khop_neighborhood(kg, &seeds, k)?;
    let entities: Vec<EntityId> = hood.entities.iter().copied().collect();
    let row: BTreeMap<EntityId, usize> = entities.iter().enumerate().map(|(i, &e)| (e, i + 1)).collect();
    let mut edges: Vec<GlobalEdge> = hood
        .triples
        .iter()
        .map(|t| GlobalEdge {
            src: row[&t.head],
            dst: row[&t.tail],
            kind: GlobalEdgeType::Kg(t.relation),
        })
        .collect();
    for i in 1..=entities.len() {
        edges.push(GlobalEdge { src: 0, dst: i, kind: GlobalEdgeType::Fusion });
        edges.push(GlobalEdge { src: i, dst: 0, kind: GlobalEdgeType::Fusion });
    }
    if table.dim() == 0 {
        return Err(KalmError::Config("embedding table has zero dimension".into()));
    }
    let features = table.gather_entities(&entities)?;
    Ok((
        GlobalSubgraph {
            entities,
            edges,
            features: Some(features),
        },
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contexts::Paragraph;

    fn doc(mentions: &[&[u32]]) -> DocumentRecord {
        DocumentRecord {
            doc_id: "d".into(),
            label: 0,
            paragraphs: mentions
                .iter()
                .map(|m| Paragraph {
                    tokens: vec!["w".into()],
                    mentions: m.iter().map(|&e| EntityId(e)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn no_shared_entities_gives_only_super_edges() {
        let edges = build_document_graph(&doc(&[&[1], &[2]]));
        assert_eq!(edges.len(), 4);
        assert!(edges.iter().all(|e| e.kind == DocEdgeType::Super));
        assert_eq!(sharing_pair_count(&edges), 0);
    }

    #[test]
    fn one_entity_in_three_paragraphs() {
        let edges = build_document_graph(&doc(&[&[7], &[7], &[7, 7]]));
        let entity: Vec<_> = edges.iter().filter(|e| e.kind == DocEdgeType::Entity(EntityId(7))).collect();
        assert_eq!(entity.len(), 6);
        assert_eq!(edges.len(), 12);
        assert_eq!(sharing_pair_count(&edges), 3);
    }

    #[test]
    fn two_shared_entities_give_parallel_edges() {
        let edges = build_document_graph(&doc(&[&[2, 5], &[5, 2, 9]]));
        let between: Vec<_> = edges.iter().filter(|e| e.src == 1 && e.dst == 2).collect();
        assert_eq!(between.len(), 2);
        let back: Vec<_> = edges.iter().filter(|e| e.src == 2 && e.dst == 1).collect();
        assert_eq!(back.len(), 2);
    }
}
