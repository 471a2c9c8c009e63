//! KALM: knowledge-aware long-document classification.
//!
//! A document is viewed through three contexts: the paragraph sequence with
//! entity descriptions appended (local), a paragraph graph whose edges are
//! shared entity mentions (document), and the k-hop knowledge-graph subgraph
//! around every mentioned entity (global). Each KALM layer encodes the three
//! contexts separately and then exchanges information between them through
//! their fusion portals.

pub mod contexts;
pub mod error;
pub mod insight;
pub mod io;
pub mod kgstore;
pub mod layers;
pub mod model;
pub mod numcore;

pub use error::{KalmError, Result};
pub use numcore::{ParamStore, Tape, Tensor, Var};
