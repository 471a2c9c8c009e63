use rand_chacha::ChaCha8Rng;

use super::ctx::ForwardCtx;
use super::linear::Linear;
use crate::error::{KalmError, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Pre-norm transformer encoder block: multi-head self-attention and a ×4
/// GELU feed-forward, each behind layer norm and a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub d: usize,
    pub heads: usize,
    ln1: (ParamId, ParamId),
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
}

/// Block output (before any outer nonlinearity) and per-head attention.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub out: Var,
    /// One `m × m` row-stochastic matrix per head, taken before dropout.
    pub attention: Vec<Tensor>,
}

fn layer_norm(tape: &mut Tape, store: &ParamStore, x: Var, (g, b): (ParamId, ParamId)) -> Result<Var> {
    let h = tape.layer_norm_rows(x, LN_EPS)?;
    let g = tape.param(store, g);
    let b = tape.param(store, b);
    let h = tape.mul_row(h, g)?;
    tape.add_row(h, b)
}

impl EncoderBlock {
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
        let ln = |store: &mut ParamStore, rng: &mut ChaCha8Rng, tag: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                store.init(format!("{name}.{tag}.g"), layer, 1, d, Init::Ones, rng)?,
                store.init(format!("{name}.{tag}.b"), layer, 1, d, Init::Zeros, rng)?,
            ))
        };
        let ln1 = ln(store, rng, "ln1")?;
        let wq = Linear::new(store, rng, &format!("{name}.wq"), layer, d, d)?;
        // A key bias adds the same score to every key of a query and cancels in the softmax.
        let wk = Linear::without_bias(store, rng, &format!("{name}.wk"), layer, d, d)?;
        let wv = Linear::new(store, rng, &format!("{name}.wv"), layer, d, d)?;
        let wo = Linear::new(store, rng, &format!("{name}.wo"), layer, d, d)?;
        let ln2 = ln(store, rng, "ln2")?;
        let ff1 = Linear::new(store, rng, &format!("{name}.ff1"), layer, d, 4 * d)?;
        let ff2 = Linear::new(store, rng, &format!("{name}.ff2"), layer, 4 * d, d)?;
        Ok(Self {
            d,
            heads,
            ln1,
            wq,
            wk,
            wv,
            wo,
            ln2,
            ff1,
            ff2,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<EncoderOutput> {
        let (m, cols) = (tape.value(x).rows(), tape.value(x).cols());
        if cols != self.d {
            return Err(KalmError::Dimension(format!(
                "encoder block expects width {}, got {cols}",
                self.d
            )));
        }
        if m == 0 {
            return Err(KalmError::Dimension("encoder block got an empty sequence".into()));
        }
        let dh = self.d / self.heads;
        let h = layer_norm(tape, store, x, self.ln1)?;
        let q = self.wq.forward(tape, store, h)?;
        let k = self.wk.forward(tape, store, h)?;
        let v = self.wv.forward(tape, store, h)?;
        let mut attention = Vec::with_capacity(self.heads);
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let s = tape.matmul_bt(qh, kh)?;
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
            let a = tape.softmax_rows(s)?;
            attention.push(tape.value(a).clone());
            let a = ctx.dropout(tape, a)?;
            outs.push(tape.matmul(a, vh)?);
        }
        let cat = tape.concat_cols(&outs)?;
        let att = self.wo.forward(tape, store, cat)?;
        let att = ctx.dropout(tape, att)?;
        let x1 = tape.add(x, att)?;

        let h2 = layer_norm(tape, store, x1, self.ln2)?;
        let f = self.ff1.forward(tape, store, h2)?;
        let f = tape.gelu(f)?;
        let f = self.ff2.forward(tape, store, f)?;
        let f = ctx.dropout(tape, f)?;
        let out = tape.add(x1, f)?;
        Ok(EncoderOutput { out, attention })
    }
}

/// `softmax(q·Kᵀ)·K` for a `1×d` query and `m×d` keys.
pub fn attentive_pool(tape: &mut Tape, q: Var, keys: Var) -> Result<Var> {
    if tape.value(keys).rows() == 0 {
        return Err(KalmError::Structural("attentive pooling over zero keys".into()));
    }
    let s = tape.matmul_bt(q, keys)?;
    let w = tape.softmax_rows(s)?;
    tape.matmul(w, keys)
}
