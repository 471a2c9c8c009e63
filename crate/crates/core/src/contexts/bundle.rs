use std::collections::BTreeMap;

use super::augment::augment_paragraph;
use super::document::DocumentRecord;
use super::embed::HashedEmbedder;
use super::graphs::{build_document_graph, build_global_subgraph, DocEdge, DocEdgeType, GlobalSubgraph};
use super::interchange::EmbeddingInterchange;
use crate::error::{KalmError, Result};
use crate::kgstore::{EmbeddingTable, EntityId, KnowledgeGraph};
use crate::numcore::{mix, Tensor};

/// Which of the three contexts are built and used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextMask {
    pub local: bool,
    pub doc: bool,
    pub global: bool,
}

impl ContextMask {
    pub const ALL: ContextMask = ContextMask {
        local: true,
        doc: true,
        global: true,
    };

    pub fn count(&self) -> usize {
        [self.local, self.doc, self.global].iter().filter(|&&b| b).count()
    }

    pub fn as_array(&self) -> [bool; 3] {
        [self.local, self.doc, self.global]
    }
}

impl Default for ContextMask {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleConfig {
    pub d_embed: usize,
    pub k_hops: usize,
    pub embed_seed: u64,
    pub mask: ContextMask,
}

/// Paragraph embeddings: the hashed fallback, or precomputed vectors keyed by
/// doc id with the fallback covering what the file lacks.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingSource<'a> {
    Hashed,
    Precomputed(&'a EmbeddingInterchange),
}

/// Paragraph sequence; features are embeddings of the augmented paragraphs.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalContext {
    pub augmented: Vec<Vec<String>>,
    /// `n × d_embed`, row `i` is paragraph `i + 1`.
    pub features: Tensor,
}

/// Knowledge-coreference paragraph graph; features embed the raw paragraphs.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentGraph {
    pub features: Tensor,
    pub edges: Vec<DocEdge>,
    /// Distinct entities used as edge types, ascending.
    pub relation_entities: Vec<EntityId>,
    /// Frozen KGE rows of `relation_entities`.
    pub relation_features: Option<Tensor>,
}

impl DocumentGraph {
    /// Row of an edge type in `[relation_features; SELF; SUPER]`.
    pub fn relation_row(&self, kind: DocEdgeType) -> usize {
        let m = self.relation_entities.len();
        match kind {
            DocEdgeType::Entity(e) => self
                .relation_entities
                .binary_search(&e)
                .expect("edge entity is listed in relation_entities"),
            DocEdgeType::SelfLoop => m,
            DocEdgeType::Super => m + 1,
        }
    }
}

/// The three contexts of one document before the learnable input projections.
/// Row 0 (the fusion portal) of each context is added by
/// [`InputProjection`](crate::layers::InputProjection).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub doc_id: String,
    pub label: usize,
    pub n_paragraphs: usize,
    pub n_mentioned: usize,
    pub local: Option<LocalContext>,
    pub doc: Option<DocumentGraph>,
    pub global: Option<GlobalSubgraph>,
    pub warnings: Vec<String>,
}

fn embed_rows(embedder: &HashedEmbedder, paragraphs: &[Vec<String>], doc_id: &str, warnings: &mut Vec<String>) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(paragraphs.len());
    for (i, p) in paragraphs.iter().enumerate() {
        let (v, ok) = embedder.embed(p);
        if !ok {
            warnings.push(format!("document {doc_id} paragraph {i} is empty; zero embedding used"));
        }
        rows.push(v);
    }
    Tensor::from_rows(&rows)
}

fn precomputed(file: &EmbeddingInterchange, key: &str, n: usize, d_embed: usize) -> Result<Option<Tensor>> {
    let Some(t) = file.get(key) else {
        return Ok(None);
    };
    if t.rank() != 2 || t.cols() != d_embed || t.rows() != n {
        return Err(KalmError::Config(format!(
            "precomputed embedding {key} has shape {:?}, expected [{n}, {d_embed}]",
            t.shape()
        )));
    }
    Ok(Some(t.clone()))
}

/// Builds the contexts enabled in `cfg.mask`; disabled contexts are never
/// constructed.
pub fn build_bundle(
    doc: &DocumentRecord,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    cfg: &BundleConfig,
    source: EmbeddingSource<'_>,
) -> Result<ContextBundle> {
    doc.validate(kg)?;
    if cfg.d_embed == 0 {
        return Err(KalmError::Config("d_embed must be positive".into()));
    }
    if let EmbeddingSource::Precomputed(file) = source {
        if file.dim() != cfg.d_embed {
            return Err(KalmError::Config(format!(
                "interchange embedding dim {} differs from d_embed {}",
                file.dim(),
                cfg.d_embed
            )));
        }
    }
    let embedder = HashedEmbedder::new(cfg.d_embed, cfg.embed_seed);
    let n = doc.n_paragraphs();
    let mut warnings = Vec::new();

    let local = if cfg.mask.local {
        let augmented: Vec<Vec<String>> = doc
            .paragraphs
            .iter()
            .map(|p| augment_paragraph(&p.tokens, &p.mentions, kg))
            .collect();
        let features = match source {
            EmbeddingSource::Precomputed(f) => precomputed(f, &doc.doc_id, n, cfg.d_embed)?,
            EmbeddingSource::Hashed => None,
        };
        let features = match features {
            Some(t) => t,
            None => embed_rows(&embedder, &augmented, &doc.doc_id, &mut warnings)?,
        };
        Some(LocalContext { augmented, features })
    } else {
        None
    };

    let document = if cfg.mask.doc {
        let raw: Vec<Vec<String>> = doc.paragraphs.iter().map(|p| p.tokens.clone()).collect();
        let features = match source {
            EmbeddingSource::Precomputed(f) => {
                precomputed(f, &EmbeddingInterchange::raw_key(&doc.doc_id), n, cfg.d_embed)?
            }
            EmbeddingSource::Hashed => None,
        };
        let features = match features {
            Some(t) => t,
            None => embed_rows(&embedder, &raw, &doc.doc_id, &mut warnings)?,
        };
        let edges = build_document_graph(doc);
        let relation_entities: Vec<EntityId> = edges
            .iter()
            .filter_map(|e| match e.kind {
                DocEdgeType::Entity(ent) => Some(ent),
                _ => None,
            })
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let relation_features = if relation_entities.is_empty() {
            None
        } else {
            Some(table.gather_entities(&relation_entities)?)
        };
        Some(DocumentGraph {
            features,
            edges,
            relation_entities,
            relation_features,
        })
    } else {
        None
    };

    let global = if cfg.mask.global {
        let (g, warn) = build_global_subgraph(doc, kg, table, cfg.k_hops)?;
        warnings.extend(warn);
        Some(g)
    } else {
        None
    };

    Ok(ContextBundle {
        doc_id: doc.doc_id.clone(),
        label: doc.label,
        n_paragraphs: n,
        n_mentioned: doc.mentioned_entities().len(),
        local,
        doc: document,
        global,
        warnings,
    })
}

/// Builds bundles for many documents; the output follows input order.
pub fn build_bundles(
    docs: &[DocumentRecord],
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    cfg: &BundleConfig,
    source: EmbeddingSource<'_>,
) -> Result<Vec<ContextBundle>> {
    docs.iter().map(|d| build_bundle(d, kg, table, cfg, source)).collect()
}

/// Stable fingerprints of each built context (`None` for absent ones).
pub fn bundle_digest(b: &ContextBundle) -> [Option<u64>; 3] {
    let hash_tensor = |mut h: u64, t: &Tensor| {
        for &d in t.shape() {
            h = mix(h ^ d as u64);
        }
        for v in t.data() {
            h = mix(h ^ v.to_bits());
        }
        h
    };
    let local = b.local.as_ref().map(|l| hash_tensor(1, &l.features));
    let doc = b.doc.as_ref().map(|d| {
        let mut h = hash_tensor(2, &d.features);
        for e in &d.edges {
            let kind = match e.kind {
                DocEdgeType::Entity(x) => x.0 as u64,
                DocEdgeType::Super => u64::MAX,
                DocEdgeType::SelfLoop => u64::MAX - 1,
            };
            h = mix(h ^ mix(e.src as u64) ^ mix(e.dst as u64 + 7) ^ kind);
        }
        h
    });
    let global = b.global.as_ref().map(|g| {
        let mut h = 3u64;
        for e in &g.entities {
            h = mix(h ^ e.0 as u64);
        }
        for e in &g.edges {
            h = mix(h ^ mix(e.src as u64) ^ mix(e.dst as u64 + 11));
        }
        if let Some(f) = &g.features {
            h = hash_tensor(h, f);
        }
        h
    });
    [local, doc, global]
}

/// Per-document counts used by the error analysis.
pub fn document_stats(bundles: &[ContextBundle]) -> BTreeMap<String, (usize, usize)> {
    bundles
        .iter()
        .map(|b| (b.doc_id.clone(), (b.n_paragraphs, b.n_mentioned)))
        .collect()
}
