use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::linear::Linear;
use crate::contexts::{DocEdgeType, DocumentGraph};
use crate::error::{KalmError, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Tensor, Var};

/// Knowledge-guided message passing on the document graph.
///
/// Every node gets a self-loop. For an edge `j -> i` with type `r` the logit is
/// `ELU(a1·Θg_i + a2·Θg_j + a3·Θf(rel_r))`; logits are normalized over all
/// edges into `i` (parallel edges included), and `g̃_i = tanh(Σ α Θg_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocGnn {
    pub d: usize,
    pub kge_dim: usize,
    theta: ParamId,
    attn: ParamId,
    rel_proj: Linear,
}

/// Edge list actually used by the layer (graph edges then self-loops).
#[derive(Debug, Clone, PartialEq)]
pub struct DocEdgeIndex {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub rel: Rc<[usize]>,
    pub n_nodes: usize,
}

impl DocEdgeIndex {
    pub fn new(graph: &DocumentGraph) -> Result<Self> {
        let n_nodes = graph.features.rows() + 1;
        let mut src = Vec::with_capacity(graph.edges.len() + n_nodes);
        let mut dst = Vec::with_capacity(src.capacity());
        let mut rel = Vec::with_capacity(src.capacity());
        for e in &graph.edges {
            if e.src >= n_nodes || e.dst >= n_nodes {
                return Err(KalmError::Structural(format!(
                    "document edge {}->{} outside {n_nodes} nodes",
                    e.src, e.dst
                )));
            }
            src.push(e.src);
            dst.push(e.dst);
            rel.push(graph.relation_row(e.kind));
        }
        for i in 0..n_nodes {
            src.push(i);
            dst.push(i);
            rel.push(graph.relation_row(DocEdgeType::SelfLoop));
        }
        Ok(Self {
            src: src.into(),
            dst: dst.into(),
            rel: rel.into(),
            n_nodes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DocOutput {
    pub out: Var,
    /// Attention per edge of `edges`, as an `E×1` column.
    pub alpha: Tensor,
    pub edges: DocEdgeIndex,
}

impl DocGnn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        layer: Option<usize>,
        d: usize,
        kge_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            d,
            kge_dim,
            theta: store.init(format!("{name}.theta"), layer, d, d, Init::FanIn, rng)?,
            attn: store.init(format!("{name}.attn"), layer, 3 * d, 1, Init::FanIn, rng)?,
            rel_proj: Linear::new(store, rng, &format!("{name}.rel_proj"), layer, kge_dim, d)?,
        })
    }

    /// `reserved` holds the SELF and SUPER relation rows (`2 × kge_dim`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: Var,
        graph: &DocumentGraph,
        reserved: Var,
    ) -> Result<DocOutput> {
        let edges = DocEdgeIndex::new(graph)?;
        let (rows, cols) = (tape.value(g).rows(), tape.value(g).cols());
        if rows != edges.n_nodes || cols != self.d {
            return Err(KalmError::Dimension(format!(
                "document layer got {rows}x{cols}, expected {}x{}",
                edges.n_nodes, self.d
            )));
        }
        let rel_table = match &graph.relation_features {
            Some(f) => {
                let f = tape.constant(f.clone());
                tape.concat_rows(&[f, reserved])?
            }
            None => reserved,
        };
        let d = self.d;
        let theta = tape.param(store, self.theta);
        let a = tape.param(store, self.attn);
        let a_dst = tape.slice_rows(a, 0, d)?;
        let a_src = tape.slice_rows(a, d, d)?;
        let a_rel = tape.slice_rows(a, 2 * d, d)?;

        let h = tape.matmul(g, theta)?;
        let fr = self.rel_proj.forward(tape, store, rel_table)?;
        let z = tape.matmul(fr, theta)?;
        let u = tape.matmul(h, a_dst)?;
        let w = tape.matmul(h, a_src)?;
        let z = tape.matmul(z, a_rel)?;
        let lu = tape.gather_rows(u, edges.dst.clone())?;
        let lw = tape.gather_rows(w, edges.src.clone())?;
        let lz = tape.gather_rows(z, edges.rel.clone())?;
        let logits = tape.add(lu, lw)?;
        let logits = tape.add(logits, lz)?;
        let logits = tape.elu(logits)?;
        let alpha = tape.segment_softmax(logits, edges.dst.clone(), edges.n_nodes)?;
        let msg = tape.gather_rows(h, edges.src.clone())?;
        let msg = tape.mul_col(msg, alpha)?;
        let agg = tape.scatter_add_rows(msg, edges.dst.clone(), edges.n_nodes)?;
        let out = tape.tanh(agg)?;
        Ok(DocOutput {
            out,
            alpha: tape.value(alpha).clone(),
            edges,
        })
    }
}
