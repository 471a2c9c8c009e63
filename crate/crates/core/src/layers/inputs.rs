use rand_chacha::ChaCha8Rng;

use super::linear::Linear;
use super::LayerState;
use crate::contexts::{ContextBundle, ContextMask};
use crate::error::{KalmError, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Var};

const PORTAL_INIT: f64 = 0.02;

/// Learnable maps from bundle features to layer-0 states: per-context linear
/// projections, per-context fusion rows and the reserved SELF/SUPER relation
/// rows of the document graph.
#[derive(Debug, Clone, PartialEq)]
pub struct InputProjection {
    pub mask: ContextMask,
    pub d: usize,
    proj: [Option<Linear>; 3],
    portal: [Option<ParamId>; 3],
    reserved: Option<ParamId>,
}

impl InputProjection {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        mask: ContextMask,
        d_embed: usize,
        kge_dim: usize,
        d: usize,
    ) -> Result<Self> {
        let names = ["local", "doc", "global"];
        let widths = [d_embed, d_embed, kge_dim];
        let mut proj: [Option<Linear>; 3] = [None, None, None];
        let mut portal = [None; 3];
        for c in 0..3 {
            if mask.as_array()[c] {
                portal[c] = Some(store.init(format!("input.{}.portal", names[c]), None, 1, d, Init::Normal(PORTAL_INIT), rng)?);
                proj[c] = Some(Linear::new(store, rng, &format!("input.{}.proj", names[c]), None, widths[c], d)?);
            }
        }
        let reserved = if mask.doc {
            Some(store.init("input.doc.reserved_relations", None, 2, kge_dim, Init::Normal(PORTAL_INIT), rng)?)
        } else {
            None
        };
        Ok(Self {
            mask,
            d,
            proj,
            portal,
            reserved,
        })
    }

    /// SELF and SUPER relation rows (`2 × kge_dim`), when the document context is on.
    pub fn reserved(&self, tape: &mut Tape, store: &ParamStore) -> Option<Var> {
        self.reserved.map(|id| tape.param(store, id))
    }

    fn context(&self, tape: &mut Tape, store: &ParamStore, c: usize, features: Option<&crate::Tensor>) -> Result<Var> {
        let portal = tape.param(store, self.portal[c].expect("active context has a portal"));
        match features {
            Some(f) => {
                let x = tape.constant(f.clone());
                let x = self.proj[c].as_ref().expect("active context has a projection").forward(tape, store, x)?;
                tape.concat_rows(&[portal, x])
            }
            None => Ok(portal),
        }
    }

    pub fn assemble(&self, tape: &mut Tape, store: &ParamStore, bundle: &ContextBundle) -> Result<LayerState> {
        let missing = |c: &str| KalmError::Config(format!("bundle {} lacks the {c} context", bundle.doc_id));
        let t = if self.mask.local {
            let l = bundle.local.as_ref().ok_or_else(|| missing("local"))?;
            Some(self.context(tape, store, 0, Some(&l.features))?)
        } else {
            None
        };
        let g = if self.mask.doc {
            let dg = bundle.doc.as_ref().ok_or_else(|| missing("document"))?;
            Some(self.context(tape, store, 1, Some(&dg.features))?)
        } else {
            None
        };
        let k = if self.mask.global {
            let gs = bundle.global.as_ref().ok_or_else(|| missing("global"))?;
            Some(self.context(tape, store, 2, gs.features.as_ref())?)
        } else {
            None
        };
        Ok(LayerState { t, g, k })
    }
}
