//! Knowledge-graph data model, TSV loading, TransE embeddings and k-hop
//! neighborhood extraction.

mod graph;
mod io;
mod khop;
mod table;
mod transe;

pub use graph::{Described, EntityId, KnowledgeGraph, RelationId, Triple};
pub use io::{descriptions_tsv, load_kg, save_kg, triples_tsv};
pub use khop::{khop_neighborhood, Neighborhood};
pub use table::{EmbeddingTable, ReservedRelation};
pub use transe::{train_transe, train_transe_logged, transe_score, TransEConfig, TransEOutcome};

/// Hop radius used for the global context.
pub const DEFAULT_K_HOPS: usize = 2;
