//! The three document contexts: augmented paragraph sequence, knowledge
//! coreference graph and k-hop KG subgraph, plus the corpus format, fallback
//! embedder and synthetic generator.

mod augment;
mod bundle;
mod document;
mod embed;
mod graphs;
mod interchange;
mod synthetic;

pub use augment::{augment_paragraph, ENTITY_SEPARATOR};
pub use bundle::{
    build_bundle, build_bundles, bundle_digest, document_stats, BundleConfig, ContextBundle, ContextMask, DocumentGraph,
    EmbeddingSource, LocalContext,
};
pub use document::{corpus_to_jsonl, load_corpus, save_corpus, DocumentRecord, Paragraph};
pub use embed::HashedEmbedder;
pub use graphs::{
    build_document_graph, build_global_subgraph, sharing_pair_count, DocEdge, DocEdgeType, GlobalEdge, GlobalEdgeType,
    GlobalSubgraph,
};
pub use interchange::{EmbeddingInterchange, INTERCHANGE_MAGIC};
pub use synthetic::{generate_synthetic_corpus, hub_entities, hub_name, shared_pairs, SHARING_THRESHOLD};
