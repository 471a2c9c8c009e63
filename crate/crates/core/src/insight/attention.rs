use std::fmt::Write as _;

use crate::contexts::{ContextBundle, ContextMask};
use crate::error::{KalmError, Result};
use crate::model::{evaluate, DocResult, KalmModel};
use crate::numcore::Tensor;

/// Mean absolute fusion attention per layer, over heads then documents.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionReport {
    /// Row/column labels, e.g. `t_L, g_L, k_L, t_G, g_G, k_G`.
    pub labels: Vec<String>,
    pub layers: Vec<Tensor>,
    pub n_docs: usize,
}

pub fn position_labels(mask: ContextMask) -> Vec<String> {
    let names = ["t", "g", "k"];
    let active: Vec<&str> = names
        .iter()
        .zip(mask.as_array())
        .filter(|(_, on)| *on)
        .map(|(n, _)| *n)
        .collect();
    active
        .iter()
        .map(|n| format!("{n}_L"))
        .chain(active.iter().map(|n| format!("{n}_G")))
        .collect()
}

fn check_captured(docs: &[DocResult]) -> Result<(usize, usize)> {
    let first = docs
        .first()
        .ok_or_else(|| KalmError::Config("attention report over zero documents".into()))?;
    if first.fusion_attention.is_empty() || first.fusion_attention[0].is_empty() {
        return Err(KalmError::Config(
            "fusion attention was not captured (needs capture_attention=true and context fusion)".into(),
        ));
    }
    let heads = first.fusion_attention[0].len();
    let layers = first.fusion_attention.len();
    for d in docs {
        if d.fusion_attention.len() != layers || d.fusion_attention.iter().any(|l| l.len() != heads) {
            return Err(KalmError::Config("documents captured differing attention layouts".into()));
        }
    }
    Ok((layers, heads))
}

/// Mean over heads of `|w|`, then mean over documents.
pub fn attention_report_from(docs: &[DocResult], mask: ContextMask) -> Result<AttentionReport> {
    let (n_layers, heads) = check_captured(docs)?;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let shape = docs[0].fusion_attention[l][0].shape().to_vec();
        let mut acc = Tensor::new(shape.clone(), vec![0.0; shape.iter().product()])?;
        for d in docs {
            let mut per_doc = Tensor::new(shape.clone(), vec![0.0; shape.iter().product()])?;
            for h in &d.fusion_attention[l] {
                per_doc = per_doc.add(&h.map(f64::abs))?;
            }
            acc = acc.add(&per_doc.scale(1.0 / heads as f64))?;
        }
        layers.push(acc.scale(1.0 / docs.len() as f64));
    }
    Ok(AttentionReport {
        labels: position_labels(mask),
        layers,
        n_docs: docs.len(),
    })
}

/// Same quantity averaged over documents first, then heads.
pub fn attention_report_docs_first(docs: &[DocResult], mask: ContextMask) -> Result<AttentionReport> {
    let (n_layers, heads) = check_captured(docs)?;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let shape = docs[0].fusion_attention[l][0].shape().to_vec();
        let mut acc = Tensor::new(shape.clone(), vec![0.0; shape.iter().product()])?;
        for h in 0..heads {
            let mut per_head = Tensor::new(shape.clone(), vec![0.0; shape.iter().product()])?;
            for d in docs {
                per_head = per_head.add(&d.fusion_attention[l][h].map(f64::abs))?;
            }
            acc = acc.add(&per_head.scale(1.0 / docs.len() as f64))?;
        }
        layers.push(acc.scale(1.0 / heads as f64));
    }
    Ok(AttentionReport {
        labels: position_labels(mask),
        layers,
        n_docs: docs.len(),
    })
}

/// Evaluates `indices` with attention capture and builds the report.
pub fn attention_report(model: &KalmModel, bundles: &[ContextBundle], indices: &[usize]) -> Result<AttentionReport> {
    let eval = evaluate(model, bundles, indices, true)?;
    attention_report_from(&eval.docs, model.arch.mask)
}

impl AttentionReport {
    /// `layer,row,<labels...>`, one line per matrix row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("layer,row,{}\n", self.labels.join(","));
        for (l, m) in self.layers.iter().enumerate() {
            for r in 0..m.rows() {
                let vals: Vec<String> = m.row_slice(r).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{l},{},{}", self.labels[r], vals.join(","));
            }
        }
        out
    }
}
