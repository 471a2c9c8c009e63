//! KALM layers: paragraph encoder, knowledge-guided document GNN, global graph
//! attention, cross-context fusion and the input projections feeding them.

mod checkpoint;
mod ctx;
mod doc_gnn;
mod encoder;
mod fusion;
mod gat;
mod inputs;
mod kalm_layer;
mod linear;

pub use checkpoint::{load_params, save_params, ManifestEntry, MANIFEST_FILE};
pub use ctx::ForwardCtx;
pub use doc_gnn::{DocEdgeIndex, DocGnn, DocOutput};
pub use encoder::{attentive_pool, EncoderBlock, EncoderOutput};
pub use fusion::{FusionKind, FusionLayer, FusionOutput};
pub use gat::{GatEdgeIndex, GatLayer, GatOutput};
pub use inputs::InputProjection;
pub use kalm_layer::{KalmLayer, LayerState, LayerTrace};
pub use linear::Linear;
