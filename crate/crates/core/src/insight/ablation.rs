use std::fmt::Write as _;

use super::metric_fields;
use crate::contexts::{ContextMask, DocumentRecord, EmbeddingSource};
use crate::error::Result;
use crate::kgstore::{EmbeddingTable, KnowledgeGraph};
use crate::layers::FusionKind;
use crate::model::{prepare_bundles, stratified_split, train, Metrics, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub contexts: ContextMask,
    pub fusion: FusionKind,
}

impl Variant {
    pub fn new(name: &str, contexts: ContextMask, fusion: FusionKind) -> Self {
        Self {
            name: name.into(),
            contexts,
            fusion,
        }
    }
}

/// Full model, one variant per removed context, and the three fusion substitutes.
pub fn standard_variants() -> Vec<Variant> {
    let all = ContextMask::ALL;
    vec![
        Variant::new("full", all, FusionKind::ContextFusion),
        Variant::new("w/o local", ContextMask { local: false, ..all }, FusionKind::ContextFusion),
        Variant::new("w/o document", ContextMask { doc: false, ..all }, FusionKind::ContextFusion),
        Variant::new("w/o global", ContextMask { global: false, ..all }, FusionKind::ContextFusion),
        Variant::new("mint", all, FusionKind::MInt),
        Variant::new("concat", all, FusionKind::Concat),
        Variant::new("sum", all, FusionKind::Sum),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: Metrics,
    pub best_epoch: usize,
    /// How many bundles carried a global subgraph.
    pub global_built: usize,
}

/// Trains every variant on the same documents and split. Each variant builds
/// only the contexts it keeps.
pub fn ablation_suite(
    kg: &KnowledgeGraph,
    docs: &[DocumentRecord],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    n_classes: usize,
    variants: &[Variant],
    source: EmbeddingSource<'_>,
) -> Result<Vec<AblationRow>> {
    let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let split = stratified_split(&labels, cfg.seed)?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut vcfg = cfg.clone();
        vcfg.contexts = v.contexts;
        vcfg.fusion = v.fusion;
        vcfg.capture_attention = false;
        vcfg.validate()?;
        let bundles = prepare_bundles(kg, docs, table, &vcfg, source)?;
        log::info!("ablation variant {}", v.name);
        let outcome = train(&bundles, &split, &vcfg, n_classes, None)?;
        rows.push(AblationRow {
            variant: v.name.clone(),
            metrics: outcome.test.metrics,
            best_epoch: outcome.best_epoch,
            global_built: bundles.iter().filter(|b| b.global.is_some()).count(),
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,acc,bacc,maf,mif,map,mar\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.variant, metric_fields(&r.metrics));
    }
    out
}
