use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{mask_text, parse_mask, TrainConfig};
use crate::contexts::{ContextBundle, ContextMask};
use crate::error::{KalmError, Result};
use crate::io::{read_utf8, write_atomic};
use crate::layers::{load_params, save_params, ForwardCtx, FusionKind, InputProjection, KalmLayer, LayerState, LayerTrace, Linear};
use crate::numcore::{ParamStore, Tape, Var};

pub const MODEL_FILE: &str = "model.json";

/// Everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_embed: usize,
    pub kge_dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_classes: usize,
    pub contexts: String,
    pub fusion: String,
}

impl ModelSpec {
    pub fn from_config(cfg: &TrainConfig, n_classes: usize) -> Self {
        Self {
            d_embed: cfg.d_embed,
            kge_dim: cfg.kge_dim,
            d_model: cfg.d_model,
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            n_classes,
            contexts: mask_text(cfg.contexts),
            fusion: cfg.fusion.to_string(),
        }
    }

    pub fn mask(&self) -> Result<ContextMask> {
        parse_mask(&self.contexts)
    }

    pub fn fusion_kind(&self) -> Result<FusionKind> {
        self.fusion.parse()
    }
}

/// Parameter layout of a KALM stack; values live in a separate [`ParamStore`]
/// so the same layout can run over perturbed copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub spec: ModelSpec,
    pub mask: ContextMask,
    pub input: InputProjection,
    pub layers: Vec<KalmLayer>,
    hidden: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `1 × n_classes` log-probabilities.
    pub log_probs: Var,
    pub initial: LayerState,
    pub last: LayerState,
    pub traces: Vec<LayerTrace>,
}

impl Architecture {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<(Self, ParamStore)> {
        let mask = spec.mask()?;
        let fusion = spec.fusion_kind()?;
        if spec.n_classes < 2 {
            return Err(KalmError::Config("at least two classes are needed".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let input = InputProjection::new(&mut store, &mut rng, mask, spec.d_embed, spec.kge_dim, spec.d_model)?;
        let layers = (0..spec.n_layers)
            .map(|l| {
                KalmLayer::new(&mut store, &mut rng, l, mask, fusion, spec.d_model, spec.n_heads, spec.kge_dim)
            })
            .collect::<Result<Vec<_>>>()?;
        let width = mask.count() * spec.d_model;
        let hidden = Linear::new(&mut store, &mut rng, "head.hidden", None, width, spec.d_model)?;
        let out = Linear::new(&mut store, &mut rng, "head.out", None, spec.d_model, spec.n_classes)?;
        Ok((
            Self {
                spec: spec.clone(),
                mask,
                input,
                layers,
                hidden,
                out,
            },
            store,
        ))
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, bundle: &ContextBundle, ctx: &mut ForwardCtx) -> Result<ForwardOutput> {
        let initial = self.input.assemble(tape, store, bundle)?;
        self.forward_from(store, tape, initial, bundle, ctx)
    }

    /// Runs the layers and head from caller-provided layer-0 states.
    pub fn forward_from(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        initial: LayerState,
        bundle: &ContextBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardOutput> {
        let reserved = self.input.reserved(tape, store);
        let mut state = initial;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, trace) = layer.forward(tape, store, state, bundle, reserved, ctx)?;
            state = next;
            if ctx.capture {
                traces.push(trace);
            }
        }
        let mut portals = Vec::with_capacity(3);
        for v in state.as_array().into_iter().flatten() {
            portals.push(tape.slice_rows(v, 0, 1)?);
        }
        let cat = tape.concat_cols(&portals)?;
        let h = self.hidden.forward(tape, store, cat)?;
        let h = tape.tanh(h)?;
        let logits = self.out.forward(tape, store, h)?;
        let log_probs = tape.log_softmax_rows(logits)?;
        Ok(ForwardOutput {
            log_probs,
            initial,
            last: state,
            traces,
        })
    }
}

/// Negative log-probability of `label`.
pub fn nll_loss(tape: &mut Tape, log_probs: Var, label: usize) -> Result<Var> {
    let c = tape.value(log_probs).cols();
    if label >= c {
        return Err(KalmError::Input(format!("label {label} outside 0..{c}")));
    }
    let lp = tape.pick(log_probs, 0, label)?;
    tape.scale(lp, -1.0)
}

/// A KALM stack with its parameter values.
#[derive(Debug, Clone)]
pub struct KalmModel {
    pub arch: Architecture,
    pub params: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub log_probs: Vec<f64>,
}

impl KalmModel {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let (arch, params) = Architecture::new(spec, seed)?;
        Ok(Self { arch, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.arch.spec
    }

    /// Eval-mode prediction (argmax of the log-probabilities; ties go to the
    /// lowest class id) together with the layer traces.
    pub fn predict_traced(&self, bundle: &ContextBundle) -> Result<(Prediction, Vec<LayerTrace>)> {
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::eval();
        let out = self.arch.forward(&self.params, &mut tape, bundle, &mut ctx)?;
        let log_probs = tape.value(out.log_probs).data().to_vec();
        let mut class = 0;
        for (i, &v) in log_probs.iter().enumerate() {
            if v > log_probs[class] {
                class = i;
            }
        }
        Ok((Prediction { class, log_probs }, out.traces))
    }

    pub fn predict(&self, bundle: &ContextBundle) -> Result<Prediction> {
        Ok(self.predict_traced(bundle)?.0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_params(dir, &self.params)?;
        let json = serde_json::to_string_pretty(self.spec()).expect("spec serializes");
        write_atomic(&dir.join(MODEL_FILE), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec_path = dir.join(MODEL_FILE);
        if !spec_path.exists() {
            return Err(KalmError::MissingPath(spec_path));
        }
        let spec: ModelSpec = serde_json::from_str(&read_utf8(&spec_path)?).map_err(|e| KalmError::Format {
            path: spec_path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let mut model = Self::new(&spec, 0)?;
        let stored = load_params(dir)?;
        model.params.load_values(&stored)?;
        Ok(model)
    }
}
