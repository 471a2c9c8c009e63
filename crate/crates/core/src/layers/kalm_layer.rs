use rand_chacha::ChaCha8Rng;

use super::ctx::ForwardCtx;
use super::doc_gnn::{DocEdgeIndex, DocGnn};
use super::encoder::EncoderBlock;
use super::fusion::{FusionKind, FusionLayer};
use super::gat::{GatEdgeIndex, GatLayer};
use crate::contexts::{ContextBundle, ContextMask};
use crate::error::{KalmError, Result};
use crate::numcore::{ParamStore, Tape, Tensor, Var};

/// Per-context states between layers; row 0 of each is its fusion portal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerState {
    pub t: Option<Var>,
    pub g: Option<Var>,
    pub k: Option<Var>,
}

impl LayerState {
    pub fn as_array(&self) -> [Option<Var>; 3] {
        [self.t, self.g, self.k]
    }
}

/// Attention distributions produced by one layer.
#[derive(Debug, Clone, Default)]
pub struct LayerTrace {
    /// Per head, `(n+1)×(n+1)`.
    pub local_attention: Vec<Tensor>,
    pub doc_alpha: Option<(Tensor, DocEdgeIndex)>,
    /// Per head.
    pub global_alpha: Option<(Vec<Tensor>, GatEdgeIndex)>,
    /// Per head, over the portal/pool sequence (6×6 with all contexts).
    pub fusion_attention: Vec<Tensor>,
}

/// One KALM layer: a context-specific layer per active context, then fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmLayer {
    pub index: usize,
    local: Option<EncoderBlock>,
    doc: Option<DocGnn>,
    global: Option<GatLayer>,
    pub fusion: FusionLayer,
}

impl KalmLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        index: usize,
        mask: ContextMask,
        fusion: FusionKind,
        d: usize,
        heads: usize,
        kge_dim: usize,
    ) -> Result<Self> {
        let layer = Some(index);
        let p = format!("layer{index}");
        let local = if mask.local {
            Some(EncoderBlock::new(store, rng, &format!("{p}.local"), layer, d, heads)?)
        } else {
            None
        };
        let doc = if mask.doc {
            Some(DocGnn::new(store, rng, &format!("{p}.doc"), layer, d, kge_dim)?)
        } else {
            None
        };
        let global = if mask.global {
            Some(GatLayer::new(store, rng, &format!("{p}.global"), layer, d, heads)?)
        } else {
            None
        };
        let fusion = FusionLayer::new(store, rng, &format!("{p}.fusion"), layer, fusion, mask, d, heads)?;
        Ok(Self {
            index,
            local,
            doc,
            global,
            fusion,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: LayerState,
        bundle: &ContextBundle,
        reserved: Option<Var>,
        ctx: &mut ForwardCtx,
    ) -> Result<(LayerState, LayerTrace)> {
        let mut trace = LayerTrace::default();
        let structural = |what: &str| KalmError::Structural(format!("layer {}: {what}", self.index));

        let t = match (&self.local, state.t) {
            (Some(enc), Some(t)) => {
                let o = enc.forward(tape, store, t, ctx)?;
                trace.local_attention = o.attention;
                Some(tape.tanh(o.out)?)
            }
            (None, None) => None,
            _ => return Err(structural("local state does not match the layer")),
        };
        let g = match (&self.doc, state.g) {
            (Some(gnn), Some(g)) => {
                let graph = bundle.doc.as_ref().ok_or_else(|| structural("bundle has no document graph"))?;
                let reserved = reserved.ok_or_else(|| structural("reserved relation rows missing"))?;
                let o = gnn.forward(tape, store, g, graph, reserved)?;
                trace.doc_alpha = Some((o.alpha, o.edges));
                Some(o.out)
            }
            (None, None) => None,
            _ => return Err(structural("document state does not match the layer")),
        };
        let k = match (&self.global, state.k) {
            (Some(gat), Some(k)) => {
                let sub = bundle.global.as_ref().ok_or_else(|| structural("bundle has no global subgraph"))?;
                let o = gat.forward(tape, store, k, sub)?;
                trace.global_alpha = Some((o.alpha, o.edges));
                Some(o.out)
            }
            (None, None) => None,
            _ => return Err(structural("global state does not match the layer")),
        };

        let outputs = [t, g, k];
        let fused = self.fusion.forward(tape, store, outputs, ctx)?;
        trace.fusion_attention = fused.attention;
        let mut next = [None; 3];
        for c in 0..3 {
            if let (Some(out), Some(portal)) = (outputs[c], fused.portals[c]) {
                let rows = tape.value(out).rows();
                next[c] = Some(if rows > 1 {
                    let rest = tape.slice_rows(out, 1, rows - 1)?;
                    tape.concat_rows(&[portal, rest])?
                } else {
                    portal
                });
            }
        }
        Ok((
            LayerState {
                t: next[0],
                g: next[1],
                k: next[2],
            },
            trace,
        ))
    }
}
