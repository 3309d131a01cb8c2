//! Aligns the feature distributions of two labeled modalities (a visual
//! source domain and an acoustic target domain) by jointly training
//! cross-attention fusion layers and a shared classifier under a
//! class-weighted kernel discrepancy penalty.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`] / [`tape`] — dense `f64` matrices and a reverse-mode
//!   gradient tape; everything differentiable is built on these.
//! - [`kernel`] — kernel matrices, per-class sample weights, and the
//!   class-local discrepancy estimator plus a plain unweighted baseline.
//! - [`attention`] — the coupled-modality cross-attention block.
//! - [`model`] — the full network (input projections, attention stack,
//!   shared classifier), loss assembly, and checkpoint I/O.
//! - [`train`] — mini-batch SGD-with-momentum loop, evaluation, ablations.
//! - [`data`] / [`metrics`] / [`pca`] — feature-file ingestion, synthetic
//!   domain generation, recognition metrics, and 2-D projection export.
//!
//! The `fdan` binary exposes `synth`, `train`, `eval`, and `project`
//! subcommands over these pieces.

pub mod attention;
pub mod data;
pub mod kernel;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pca;
pub mod tape;
pub mod train;

pub use attention::{AttentionBlockParams, ModalityBlockParams};
pub use data::{FeatureDomain, Modality, SynthSpec};
pub use kernel::{Bandwidth, ClassWeights, KernelFamily, KernelSpec};
pub use matrix::Matrix;
pub use metrics::MetricsReport;
pub use model::{ForwardTrace, LossBreakdown, ModelConfig, ModelParams};
pub use tape::{GradientMap, NodeId, Tape};
pub use train::{Ablation, EpochRecord, TrainConfig, TrainHistory};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands whose shapes must agree did not.
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    /// A scalar argument was outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A label row failed validation (not one-hot, index out of range, ...).
    #[error("label error at row {row}: {msg}")]
    Label { row: usize, msg: String },
    /// A file failed structural validation (magic, version, length, ...).
    #[error("format error: {0}")]
    Format(String),
    /// Incompatible inputs at the configuration level (class counts, widths).
    #[error("configuration error: {0}")]
    Config(String),
    /// Gradient backward was asked to start from a non-scalar node.
    #[error("backward requires a scalar loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    /// Training produced a non-finite loss.
    #[error("numerical divergence at epoch {epoch}, step {step}: loss = {value}")]
    Divergence {
        epoch: usize,
        step: usize,
        value: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
