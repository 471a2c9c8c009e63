use super::config::TrainConfig;
use crate::contexts::{build_bundles, generate_synthetic_corpus, BundleConfig, ContextBundle, DocumentRecord, EmbeddingSource};
use crate::error::Result;
use crate::kgstore::{train_transe, EmbeddingTable, KnowledgeGraph, TransEConfig};

pub fn transe_config(cfg: &TrainConfig) -> TransEConfig {
    TransEConfig {
        dim: cfg.kge_dim,
        margin: cfg.transe_margin,
        epochs: cfg.transe_epochs,
        lr: cfg.transe_lr,
        seed: cfg.seed,
    }
}

/// Frozen TransE table for `kg`.
pub fn embed_kg(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<EmbeddingTable> {
    train_transe(kg, &transe_config(cfg))
}

pub fn bundle_config(cfg: &TrainConfig) -> BundleConfig {
    BundleConfig {
        d_embed: cfg.d_embed,
        k_hops: cfg.k_hops,
        embed_seed: cfg.seed,
        mask: cfg.contexts,
    }
}

/// Bundles for every document under the configured context mask.
pub fn prepare_bundles(
    kg: &KnowledgeGraph,
    docs: &[DocumentRecord],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    source: EmbeddingSource<'_>,
) -> Result<Vec<ContextBundle>> {
    let bundles = build_bundles(docs, kg, table, &bundle_config(cfg), source)?;
    for b in &bundles {
        for w in &b.warnings {
            log::warn!("{w}");
        }
    }
    Ok(bundles)
}

/// A synthetic corpus with its KG embedding and bundles.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub kg: KnowledgeGraph,
    pub docs: Vec<DocumentRecord>,
    pub table: EmbeddingTable,
    pub bundles: Vec<ContextBundle>,
}

/// Generates the synthetic corpus for `cfg` (`seed`, `n_docs`, `kg_size`,
/// `n_classes`) and builds its bundles with the hashed embedder.
pub fn prepare_synthetic(cfg: &TrainConfig) -> Result<SyntheticData> {
    let (kg, docs) = generate_synthetic_corpus(cfg.seed, cfg.n_docs, cfg.kg_size, cfg.n_classes)?;
    let table = embed_kg(&kg, cfg)?;
    let bundles = prepare_bundles(&kg, &docs, &table, cfg, EmbeddingSource::Hashed)?;
    Ok(SyntheticData {
        kg,
        docs,
        table,
        bundles,
    })
}
