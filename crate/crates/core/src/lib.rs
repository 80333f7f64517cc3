//! Trainable classification head for multimodal meme classification over
//! frozen image and text embeddings.
//!
//! The crate covers the embedding bundle formats ([`bundle`]), the head
//! itself ([`head`]) with its hand-written backward pass, Adam training and
//! checkpoints ([`trainer`]), evaluation metrics ([`metrics`]), gradient
//! checks ([`gradcheck`]) and the experiment drivers used by the `memehead`
//! binary ([`harness`]).

pub mod bundle;
mod container;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod head;
pub mod metrics;
pub mod numerics;
pub mod synthetic;
pub mod trainer;

pub use bundle::{ClassPromptSet, EmbeddingBundle, EmbeddingRecord, Split, TaskSchema};
pub use error::{Error, Result};
pub use head::{count_params, HeadConfig, HeadParams};
pub use metrics::MetricsReport;
pub use trainer::{fit, Checkpoint, TrainConfig, TrainHistory};
