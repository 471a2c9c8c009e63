use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use super::ctx::ForwardCtx;
use super::encoder::{attentive_pool, EncoderBlock};
use super::linear::Linear;
use crate::contexts::ContextMask;
use crate::error::{KalmError, Result};
use crate::numcore::{ParamStore, Tape, Tensor, Var};

/// How the three fusion portals exchange information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionKind {
    /// Encoder over portals and attentive pools of every active context.
    ContextFusion,
    /// Portals pass through untouched.
    Identity,
    /// Concatenated portals, one linear map, shared by every context.
    Concat,
    /// Summed portals, one linear map, shared by every context.
    Sum,
    /// Local and global portals mixed by a two-position MLP; document untouched.
    MInt,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::ContextFusion,
        FusionKind::Identity,
        FusionKind::Concat,
        FusionKind::Sum,
        FusionKind::MInt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::ContextFusion => "context",
            FusionKind::Identity => "identity",
            FusionKind::Concat => "concat",
            FusionKind::Sum => "sum",
            FusionKind::MInt => "mint",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = KalmError;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| KalmError::Config(format!("unknown fusion kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Mixer {
    Encoder(EncoderBlock),
    None,
    Concat(Linear),
    Sum(Linear),
    MInt(Linear, Linear),
}

/// Cross-context exchange on the fusion rows (row 0) of each context.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionLayer {
    pub kind: FusionKind,
    pub mask: ContextMask,
    pub d: usize,
    mixer: Mixer,
}

/// New portal rows (`1×d`, `None` for inactive contexts) and, for
/// [`FusionKind::ContextFusion`], per-head attention over the portal sequence.
#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub portals: [Option<Var>; 3],
    pub attention: Vec<Tensor>,
}

impl FusionLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        layer: Option<usize>,
        kind: FusionKind,
        mask: ContextMask,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        let m = mask.count();
        if m == 0 {
            return Err(KalmError::Config("at least one context must be enabled".into()));
        }
        let mixer = match kind {
            FusionKind::ContextFusion => Mixer::Encoder(EncoderBlock::new(store, rng, name, layer, d, heads)?),
            FusionKind::Identity => Mixer::None,
            FusionKind::Concat => Mixer::Concat(Linear::new(store, rng, &format!("{name}.concat"), layer, m * d, d)?),
            FusionKind::Sum => Mixer::Sum(Linear::new(store, rng, &format!("{name}.sum"), layer, d, d)?),
            FusionKind::MInt => {
                if !(mask.local && mask.global) {
                    return Err(KalmError::Config("mint fusion needs the local and global contexts".into()));
                }
                Mixer::MInt(
                    Linear::new(store, rng, &format!("{name}.mint_in"), layer, 2 * d, d)?,
                    Linear::new(store, rng, &format!("{name}.mint_out"), layer, d, 2 * d)?,
                )
            }
        };
        Ok(Self { kind, mask, d, mixer })
    }

    /// The post-sum linear map, exposed for tests that set it to identity.
    pub fn sum_linear(&self) -> Option<&Linear> {
        match &self.mixer {
            Mixer::Sum(l) => Some(l),
            _ => None,
        }
    }

    /// `outputs[c]` is the full layer output of context `c` (row 0 = portal).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        outputs: [Option<Var>; 3],
        ctx: &mut ForwardCtx,
    ) -> Result<FusionOutput> {
        let mut portals: [Option<Var>; 3] = [None; 3];
        let mut active = Vec::with_capacity(3);
        for (c, (on, out)) in self.mask.as_array().into_iter().zip(outputs).enumerate() {
            match (on, out) {
                (true, Some(v)) => {
                    if tape.value(v).cols() != self.d {
                        return Err(KalmError::Dimension(format!(
                            "fusion expects width {}, got {}",
                            self.d,
                            tape.value(v).cols()
                        )));
                    }
                    portals[c] = Some(tape.slice_rows(v, 0, 1)?);
                    active.push((c, v));
                }
                (false, None) => {}
                (true, None) => return Err(KalmError::Structural(format!("context {c} output missing"))),
                (false, Some(_)) => return Err(KalmError::Structural(format!("context {c} is disabled"))),
            }
        }
        let mut attention = Vec::new();
        match &self.mixer {
            Mixer::None => {}
            Mixer::Encoder(enc) => {
                let mut seq: Vec<Var> = active.iter().map(|&(c, _)| portals[c].expect("active")).collect();
                for &(c, v) in &active {
                    let rows = tape.value(v).rows();
                    let q = portals[c].expect("active");
                    // A context with only its fusion row pools over itself.
                    let pooled = if rows > 1 {
                        let keys = tape.slice_rows(v, 1, rows - 1)?;
                        attentive_pool(tape, q, keys)?
                    } else {
                        q
                    };
                    seq.push(pooled);
                }
                let seq = tape.concat_rows(&seq)?;
                let enc_out = enc.forward(tape, store, seq, ctx)?;
                attention = enc_out.attention;
                let out = tape.tanh(enc_out.out)?;
                for (i, &(c, _)) in active.iter().enumerate() {
                    portals[c] = Some(tape.slice_rows(out, i, 1)?);
                }
            }
            Mixer::Concat(lin) => {
                let parts: Vec<Var> = active.iter().map(|&(c, _)| portals[c].expect("active")).collect();
                let cat = tape.concat_cols(&parts)?;
                let fused = lin.forward(tape, store, cat)?;
                for &(c, _) in &active {
                    portals[c] = Some(fused);
                }
            }
            Mixer::Sum(lin) => {
                let mut acc = portals[active[0].0].expect("active");
                for &(c, _) in &active[1..] {
                    acc = tape.add(acc, portals[c].expect("active"))?;
                }
                let fused = lin.forward(tape, store, acc)?;
                for &(c, _) in &active {
                    portals[c] = Some(fused);
                }
            }
            Mixer::MInt(lin_in, lin_out) => {
                let (t, k) = (portals[0].expect("local"), portals[2].expect("global"));
                let cat = tape.concat_cols(&[t, k])?;
                let h = lin_in.forward(tape, store, cat)?;
                let h = tape.tanh(h)?;
                let mixed = lin_out.forward(tape, store, h)?;
                portals[0] = Some(tape.slice_cols(mixed, 0, self.d)?);
                portals[2] = Some(tape.slice_cols(mixed, self.d, self.d)?);
            }
        }
        Ok(FusionOutput { portals, attention })
    }
}
