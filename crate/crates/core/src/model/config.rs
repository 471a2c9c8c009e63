use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::contexts::ContextMask;
use crate::error::{KalmError, Result};
use crate::io::read_utf8;
use crate::layers::FusionKind;

/// Every tunable of the pipeline, read from flat `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub k_hops: usize,
    pub seed: u64,
    pub kge_dim: usize,
    pub d_embed: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub transe_epochs: usize,
    pub transe_lr: f64,
    pub transe_margin: f64,
    pub n_docs: usize,
    pub kg_size: usize,
    pub n_classes: usize,
    pub contexts: ContextMask,
    pub fusion: FusionKind,
    pub capture_attention: bool,
    pub fractions: Vec<f64>,
    pub length_bins: Vec<usize>,
    pub entity_bins: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            n_layers: 2,
            n_heads: 8,
            dropout: 0.5,
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 16,
            max_epochs: 100,
            k_hops: 2,
            seed: 0,
            kge_dim: 100,
            d_embed: 64,
            patience: 10,
            clip_norm: 5.0,
            transe_epochs: 500,
            transe_lr: 0.01,
            transe_margin: 1.0,
            n_docs: 100,
            kg_size: 200,
            n_classes: 2,
            contexts: ContextMask::ALL,
            fusion: FusionKind::ContextFusion,
            capture_attention: true,
            fractions: vec![0.1, 0.3, 0.5, 1.0],
            length_bins: vec![4, 6],
            entity_bins: vec![5, 10],
        }
    }
}

/// Key names with a one-line description, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("d_model", "hidden width of every layer"),
    ("n_layers", "number of stacked KALM layers"),
    ("n_heads", "attention heads (encoders and graph attention)"),
    ("dropout", "dropout rate in train mode"),
    ("lr", "RAdam learning rate"),
    ("weight_decay", "decoupled weight decay"),
    ("batch_size", "documents per optimizer step"),
    ("max_epochs", "epoch limit"),
    ("k_hops", "hop radius of the global subgraph"),
    ("seed", "seed for generation, splits, init, shuffling and dropout"),
    ("kge_dim", "TransE embedding width"),
    ("d_embed", "paragraph embedding width"),
    ("patience", "early-stopping patience on validation macro-F1"),
    ("clip_norm", "global gradient-norm clip"),
    ("transe_epochs", "TransE training epochs"),
    ("transe_lr", "TransE learning rate"),
    ("transe_margin", "TransE ranking margin"),
    ("n_docs", "synthetic corpus size"),
    ("kg_size", "synthetic KG entity count"),
    ("n_classes", "synthetic class count"),
    ("contexts", "enabled contexts, comma list of local,doc,global"),
    ("fusion", "fusion kind: context, identity, concat, sum, mint"),
    ("capture_attention", "record fusion attention at evaluation"),
    ("fractions", "training fractions for the data-efficiency sweep"),
    ("length_bins", "paragraph-count bin edges of the error grid"),
    ("entity_bins", "mentioned-entity bin edges of the error grid"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| KalmError::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_mask(value: &str) -> Result<ContextMask> {
    let mut mask = ContextMask {
        local: false,
        doc: false,
        global: false,
    };
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part {
            "local" => mask.local = true,
            "doc" => mask.doc = true,
            "global" => mask.global = true,
            other => return Err(KalmError::Config(format!("unknown context {other:?}"))),
        }
    }
    if mask.count() == 0 {
        return Err(KalmError::Config("contexts must name at least one context".into()));
    }
    Ok(mask)
}

pub fn mask_text(mask: ContextMask) -> String {
    let names = ["local", "doc", "global"];
    names
        .iter()
        .zip(mask.as_array())
        .filter(|(_, on)| *on)
        .map(|(n, _)| *n)
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d_model" => self.d_model = parse(key, value)?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "k_hops" => self.k_hops = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "kge_dim" => self.kge_dim = parse(key, value)?,
            "d_embed" => self.d_embed = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "transe_epochs" => self.transe_epochs = parse(key, value)?,
            "transe_lr" => self.transe_lr = parse(key, value)?,
            "transe_margin" => self.transe_margin = parse(key, value)?,
            "n_docs" => self.n_docs = parse(key, value)?,
            "kg_size" => self.kg_size = parse(key, value)?,
            "n_classes" => self.n_classes = parse(key, value)?,
            "contexts" => self.contexts = parse_mask(value)?,
            "fusion" => self.fusion = value.trim().parse()?,
            "capture_attention" => self.capture_attention = parse(key, value)?,
            "fractions" => self.fractions = parse_list(key, value)?,
            "length_bins" => self.length_bins = parse_list(key, value)?,
            "entity_bins" => self.entity_bins = parse_list(key, value)?,
            other => return Err(KalmError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "d_model" => self.d_model.to_string(),
            "n_layers" => self.n_layers.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "dropout" => self.dropout.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "k_hops" => self.k_hops.to_string(),
            "seed" => self.seed.to_string(),
            "kge_dim" => self.kge_dim.to_string(),
            "d_embed" => self.d_embed.to_string(),
            "patience" => self.patience.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "transe_epochs" => self.transe_epochs.to_string(),
            "transe_lr" => self.transe_lr.to_string(),
            "transe_margin" => self.transe_margin.to_string(),
            "n_docs" => self.n_docs.to_string(),
            "kg_size" => self.kg_size.to_string(),
            "n_classes" => self.n_classes.to_string(),
            "contexts" => mask_text(self.contexts),
            "fusion" => self.fusion.to_string(),
            "capture_attention" => self.capture_attention.to_string(),
            "fractions" => join(&self.fractions),
            "length_bins" => join(&self.length_bins),
            "entity_bins" => join(&self.entity_bins),
            _ => return None,
        })
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| KalmError::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            cfg.set(key.trim(), value)
                .map_err(|e| KalmError::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&read_utf8(path)?)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| KalmError::Config(format!("override {item:?} is not key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in CONFIG_KEYS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key).expect("listed key"));
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("kge_dim", self.kge_dim),
            ("d_embed", self.d_embed),
            ("patience", self.patience),
            ("n_docs", self.n_docs),
            ("kg_size", self.kg_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(KalmError::Config(format!("{k} must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(KalmError::Config("n_classes must be at least 2".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(KalmError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(KalmError::Config("dropout must lie in [0, 1)".into()));
        }
        for (k, v) in [
            ("lr", self.lr),
            ("clip_norm", self.clip_norm),
            ("transe_lr", self.transe_lr),
            ("transe_margin", self.transe_margin),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KalmError::Config(format!("{k} must be positive")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(KalmError::Config("weight_decay must be non-negative".into()));
        }
        if self.fusion == FusionKind::MInt && !(self.contexts.local && self.contexts.global) {
            return Err(KalmError::Config("mint fusion needs the local and global contexts".into()));
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(KalmError::Config("fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("contexts", "local,global").unwrap();
        cfg.set("fusion", "sum").unwrap();
        cfg.set("weight_decay", "0.00002").unwrap();
        assert_eq!(TrainConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_and_bad_values_rejected() {
        assert!(TrainConfig::parse_text("lerning_rate=0.1").is_err());
        assert!(TrainConfig::parse_text("lr=fast").is_err());
        assert!(TrainConfig::parse_text("d_model=30\nn_heads=8").is_err());
        assert!(TrainConfig::parse_text("contexts=").is_err());
        assert!(TrainConfig::parse_text("fusion=mint\ncontexts=local,doc").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = TrainConfig::parse_text("# tiny\n\nd_model = 64  # scaled down\n").unwrap();
        assert_eq!(cfg.d_model, 64);
    }

    #[test]
    fn every_key_listed_is_gettable() {
        let cfg = TrainConfig::default();
        for (k, _) in CONFIG_KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
    }
}
