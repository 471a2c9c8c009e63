use rand_chacha::ChaCha8Rng;

use crate::error::{KalmError, Result};
use crate::numcore::{Init, ParamId, ParamStore, Tape, Var};

/// Affine map `x·W + b` with `W: d_in × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        layer: Option<usize>,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        let w = store.init(format!("{name}.w"), layer, d_in, d_out, Init::FanIn, rng)?;
        let b = store.init(format!("{name}.b"), layer, 1, d_out, Init::Zeros, rng)?;
        Ok(Self {
            w,
            b: Some(b),
            d_in,
            d_out,
        })
    }

    /// `x·W` only.
    pub fn without_bias(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        layer: Option<usize>,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        let w = store.init(format!("{name}.w"), layer, d_in, d_out, Init::FanIn, rng)?;
        Ok(Self { w, b: None, d_in, d_out })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.d_in {
            return Err(KalmError::Dimension(format!(
                "linear layer expects {} input columns, got {cols}",
                self.d_in
            )));
        }
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}
