//! The trainable classification head over frozen embeddings.

mod config;
mod params;
mod pass;

pub use config::{count_params, ClassifierKind, FusionKind, HeadConfig, InitKind};
pub use params::{apply_semantic_init, init_params, Adapter, Affine, HeadParams};
pub use pass::{backward, backward_into, forward, ForwardCache};
