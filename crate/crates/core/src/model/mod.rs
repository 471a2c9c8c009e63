//! The full classifier: configuration, forward pass and loss, RAdam,
//! metrics, data splits, training and evaluation.

mod config;
mod kalm;
mod metrics;
mod pipeline;
mod radam;
mod split;
mod train;

pub use config::{mask_text, parse_mask, TrainConfig, CONFIG_KEYS};
pub use kalm::{nll_loss, Architecture, ForwardOutput, KalmModel, ModelSpec, Prediction, MODEL_FILE};
pub use metrics::Metrics;
pub use pipeline::{bundle_config, embed_kg, prepare_bundles, prepare_synthetic, transe_config, SyntheticData};
pub use radam::RAdam;
pub use split::{stratified_split, Split};
pub use train::{batch_gradients, class_count, evaluate, train, DocResult, EpochRecord, Evaluation, TrainOutcome, LOG_HEADER};
