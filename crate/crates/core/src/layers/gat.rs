use std::collections::BTreeSet;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::linear::Linear;
use crate::contexts::GlobalSubgraph;
use crate::error::{KalmError, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Tensor, Var};

const LEAKY_SLOPE: f64 = 0.2;

/// Multi-head graph attention over the global subgraph.
///
/// Edges are taken undirected (one pair per connected node pair, whatever the
/// relations), plus a self-loop per node. Head outputs are concatenated, then
/// projected back to `d` and passed through tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub d: usize,
    pub heads: usize,
    w: ParamId,
    a_src: ParamId,
    a_dst: ParamId,
    out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatEdgeIndex {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub n_nodes: usize,
}

impl GatEdgeIndex {
    pub fn new(sub: &GlobalSubgraph) -> Result<Self> {
        let n = sub.n_nodes();
        let mut pairs = BTreeSet::new();
        for e in &sub.edges {
            if e.src >= n || e.dst >= n {
                return Err(KalmError::Structural(format!("global edge {}->{} outside {n} nodes", e.src, e.dst)));
            }
            if e.src != e.dst {
                pairs.insert((e.src, e.dst));
                pairs.insert((e.dst, e.src));
            }
        }
        for i in 0..n {
            pairs.insert((i, i));
        }
        let (src, dst): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        Ok(Self {
            src: src.into(),
            dst: dst.into(),
            n_nodes: n,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GatOutput {
    pub out: Var,
    /// Per head, attention per edge as an `E×1` column.
    pub alpha: Vec<Tensor>,
    pub edges: GatEdgeIndex,
}

impl GatLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        layer: Option<usize>,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(KalmError::Config(format!("d_model {d} is not divisible by n_heads {heads}")));
        }
        let dh = d / heads;
        Ok(Self {
            d,
            heads,
            w: store.init(format!("{name}.w"), layer, d, d, Init::FanIn, rng)?,
            a_src: store.init(format!("{name}.a_src"), layer, dh, heads, Init::FanIn, rng)?,
            a_dst: store.init(format!("{name}.a_dst"), layer, dh, heads, Init::FanIn, rng)?,
            out: Linear::new(store, rng, &format!("{name}.out"), layer, d, d)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, k: Var, sub: &GlobalSubgraph) -> Result<GatOutput> {
        let edges = GatEdgeIndex::new(sub)?;
        let (rows, cols) = (tape.value(k).rows(), tape.value(k).cols());
        if rows != edges.n_nodes || cols != self.d {
            return Err(KalmError::Dimension(format!(
                "global layer got {rows}x{cols}, expected {}x{}",
                edges.n_nodes, self.d
            )));
        }
        let dh = self.d / self.heads;
        let w = tape.param(store, self.w);
        let a_src = tape.param(store, self.a_src);
        let a_dst = tape.param(store, self.a_dst);
        let wh = tape.matmul(k, w)?;
        let mut outs = Vec::with_capacity(self.heads);
        let mut alphas = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let hh = tape.slice_cols(wh, head * dh, dh)?;
            let asr = tape.slice_cols(a_src, head, 1)?;
            let ads = tape.slice_cols(a_dst, head, 1)?;
            let s = tape.matmul(hh, asr)?;
            let t = tape.matmul(hh, ads)?;
            let ls = tape.gather_rows(s, edges.src.clone())?;
            let lt = tape.gather_rows(t, edges.dst.clone())?;
            let logits = tape.add(lt, ls)?;
            let logits = tape.leaky_relu(logits, LEAKY_SLOPE)?;
            let alpha = tape.segment_softmax(logits, edges.dst.clone(), edges.n_nodes)?;
            alphas.push(tape.value(alpha).clone());
            let msg = tape.gather_rows(hh, edges.src.clone())?;
            let msg = tape.mul_col(msg, alpha)?;
            outs.push(tape.scatter_add_rows(msg, edges.dst.clone(), edges.n_nodes)?);
        }
        let cat = tape.concat_cols(&outs)?;
        let proj = self.out.forward(tape, store, cat)?;
        let out = tape.tanh(proj)?;
        Ok(GatOutput {
            out,
            alpha: alphas,
            edges,
        })
    }
}
