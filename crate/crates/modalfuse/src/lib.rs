//! Multimodal contrastive embedding toolkit with channel-isolated fusion.
//!
//! Three fusion strategies share one transformer backbone: modal channel
//! attention (one isolated fusion block per modality subset), Zorro
//! (a single all-modality fusion block), and everything-at-once (no fusion
//! tokens, one forward pass per modality subset). Attention-mask isolation,
//! missing-modality padding, contrastive training, and the evaluation stack
//! (alignment/uniformity, ranking, linear probes) live in the submodules.

pub mod autodiff;
pub mod checkpoint;
pub mod contrastive;
pub mod embedfile;
pub mod data;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod params;
pub mod probe;
pub mod train;
pub mod schema;

pub use error::{Error, Result};
pub use schema::{FusionMode, ModalityDecl, ModalityKind, ModalitySchema};
