//! Language-embedded 3D Gaussian splatting.
//!
//! The crate renders per-pixel semantic-index distributions from a Gaussian
//! scene, lifts them into a language feature space through a quantized
//! codebook, and scores the result against positive and canonical phrase
//! embeddings to produce open-vocabulary segmentations. Phrase sets can be
//! produced by an OpenAI-compatible chat endpoint (or offline fixtures).
//!
//! Per-pixel loops run on rayon when the `parallel` feature is enabled
//! (default); [`Execution::Sequential`] forces the single-threaded path and
//! produces bit-identical output.

pub mod bench;
pub mod error;
pub mod exec;
pub mod io;
pub mod metrics;
pub mod mlp;
pub mod quant;
pub mod query;
pub mod relevancy;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
pub use metrics::{ConfusionCounts, MetricsReport};
pub use mlp::{DecoderMLP, SmoothingMLP};
pub use quant::Codebook;
pub use relevancy::{EmbeddingTable, FeatureMap, QuerySpec, RelevancyMap, SegMask};
pub use render::{RenderedImage, SemanticDistributionMap, Splat2D};
pub use scene::{Camera, Gaussian3D, Scene, SyntheticSceneSpec};
pub use train::TrainConfig;
