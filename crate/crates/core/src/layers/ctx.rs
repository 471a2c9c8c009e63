use crate::error::Result;
use crate::numcore::{DropoutRng, Tape, Var};

/// Per-forward settings: dropout stream (train mode) and attention capture.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    p: f64,
    rng: Option<DropoutRng>,
    pub capture: bool,
}

impl ForwardCtx {
    /// Inference: no dropout, attention captured.
    pub fn eval() -> Self {
        Self {
            p: 0.0,
            rng: None,
            capture: true,
        }
    }

    pub fn train(p: f64, rng: DropoutRng) -> Self {
        Self {
            p,
            rng: Some(rng),
            capture: false,
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some() && self.p > 0.0
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) if self.p > 0.0 => {
                let mask = rng.mask(tape.value(x).len(), self.p);
                tape.dropout(x, mask)
            }
            _ => Ok(x),
        }
    }
}
