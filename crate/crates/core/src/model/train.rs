use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::kalm::{nll_loss, KalmModel, ModelSpec, Prediction};
use super::metrics::Metrics;
use super::radam::RAdam;
use super::split::Split;
use crate::contexts::ContextBundle;
use crate::error::{KalmError, Result};
use crate::io::write_atomic;
use crate::layers::ForwardCtx;
use crate::numcore::{mix, DropoutRng, ParamGrads, Tape, Tensor};

pub const LOG_HEADER: &str = "epoch,split,loss,acc,bacc,maf,mif,map,mar";

/// One evaluated document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocResult {
    pub index: usize,
    pub label: usize,
    pub prediction: Prediction,
    /// Per layer, per head fusion attention (empty when not captured).
    pub fusion_attention: Vec<Vec<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metrics: Metrics,
    pub docs: Vec<DocResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub metrics: Metrics,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.split, self.loss, m.acc, m.balanced_acc, m.macro_f1, m.micro_f1, m.macro_precision, m.macro_recall
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch, rounded to checkpoint precision.
    pub model: KalmModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: Evaluation,
}

impl TrainOutcome {
    pub fn max_train_acc(&self) -> f64 {
        self.history
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| r.metrics.acc)
            .fold(0.0, f64::max)
    }

    pub fn log_csv(&self) -> String {
        render_log(&self.history)
    }
}

fn render_log(history: &[EpochRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Number of classes implied by the bundles and the configured minimum.
pub fn class_count(bundles: &[ContextBundle], configured: usize) -> usize {
    bundles.iter().map(|b| b.label + 1).max().unwrap_or(0).max(configured)
}

/// Eval-mode predictions, mean loss and metrics over `indices`.
pub fn evaluate(model: &KalmModel, bundles: &[ContextBundle], indices: &[usize], capture: bool) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(KalmError::Config("cannot evaluate an empty split".into()));
    }
    let n_classes = model.spec().n_classes;
    let mut docs = Vec::with_capacity(indices.len());
    let mut loss = 0.0;
    for &i in indices {
        let b = bundles
            .get(i)
            .ok_or_else(|| KalmError::Input(format!("document index {i} out of range")))?;
        if b.label >= n_classes {
            return Err(KalmError::Input(format!("document {} label {} outside 0..{n_classes}", b.doc_id, b.label)));
        }
        let (prediction, traces) = model.predict_traced(b)?;
        loss -= prediction.log_probs[b.label];
        let fusion_attention = if capture {
            traces.into_iter().map(|t| t.fusion_attention).collect()
        } else {
            vec![]
        };
        docs.push(DocResult {
            index: i,
            label: b.label,
            prediction,
            fusion_attention,
        });
    }
    let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let preds: Vec<usize> = docs.iter().map(|d| d.prediction.class).collect();
    Ok(Evaluation {
        loss: loss / indices.len() as f64,
        metrics: Metrics::from_predictions(&labels, &preds, n_classes)?,
        docs,
    })
}

/// Gradient of the mean loss over `batch`, in train mode, accumulated in
/// `doc_id` order.
pub fn batch_gradients(
    model: &KalmModel,
    bundles: &[ContextBundle],
    batch: &[usize],
    dropout: f64,
    seed: u64,
    epoch: usize,
) -> Result<(ParamGrads, f64)> {
    let mut acc = ParamGrads::default();
    let mut total = 0.0;
    let w = 1.0 / batch.len() as f64;
    let mut ordered = batch.to_vec();
    ordered.sort_by(|&a, &b| bundles[a].doc_id.cmp(&bundles[b].doc_id).then(a.cmp(&b)));
    for i in ordered {
        let b = &bundles[i];
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::train(dropout, DropoutRng::derive(seed, epoch as u64, i as u64));
        let out = model.arch.forward(&model.params, &mut tape, b, &mut ctx)?;
        let loss = nll_loss(&mut tape, out.log_probs, b.label)?;
        total += tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        acc.accumulate(grads.params(), w);
    }
    Ok((acc, total * w))
}

/// Trains from a fresh initialization seeded by `cfg.seed`, keeping the
/// best-validation-macro-F1 parameters. When `log_path` is given the epoch log
/// is rewritten (atomically) after every epoch.
pub fn train(
    bundles: &[ContextBundle],
    split: &Split,
    cfg: &TrainConfig,
    n_classes: usize,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            return Err(KalmError::Config(format!("{name} split is empty")));
        }
    }
    let spec = ModelSpec::from_config(cfg, n_classes);
    let mut model = KalmModel::new(&spec, cfg.seed)?;
    let mut opt = RAdam::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut best = model.params.clone();
    best.round_to_f32();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order = split.train.clone();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ mix(epoch as u64)));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (mut grads, _) = batch_gradients(&model, bundles, batch, cfg.dropout, cfg.seed, epoch)?;
            grads.clip_global_norm(cfg.clip_norm);
            opt.step(&mut model.params, &grads)?;
        }
        let tr = evaluate(&model, bundles, &split.train, false)?;
        let va = evaluate(&model, bundles, &split.val, false)?;
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} maf {:.3}",
            tr.loss,
            tr.metrics.acc,
            va.loss,
            va.metrics.macro_f1
        );
        history.push(EpochRecord {
            epoch,
            split: "train".into(),
            loss: tr.loss,
            metrics: tr.metrics,
        });
        let val_f1 = va.metrics.macro_f1;
        history.push(EpochRecord {
            epoch,
            split: "val".into(),
            loss: va.loss,
            metrics: va.metrics,
        });
        if let Some(p) = log_path {
            write_atomic(p, render_log(&history).as_bytes())?;
        }
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            since_best = 0;
            best = model.params.clone();
            best.round_to_f32();
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    model.params = best;
    let test = evaluate(&model, bundles, &split.test, cfg.capture_attention)?;
    history.push(EpochRecord {
        epoch: best_epoch,
        split: "test".into(),
        loss: test.loss,
        metrics: test.metrics.clone(),
    });
    if let Some(p) = log_path {
        write_atomic(p, render_log(&history).as_bytes())?;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        epochs_run,
        test,
    })
}
