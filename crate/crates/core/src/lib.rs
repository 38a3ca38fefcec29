//! Recursive-least-squares nonlinear PCA for blind source separation, and
//! Deep-RLS: the same recursion unrolled into a trainable network.
//!
//! - [`signal`]: synthetic uniform sources, Gaussian mixing, dataset files.
//! - [`rls`]: the classical tracker plus closed-form and gradient oracles.
//! - [`tape`]: reverse-mode differentiation over small dense matrices.
//! - [`deep`]: the unfolded model, its loss, Adam training and metrics.
//! - [`experiment`]: sweep runs producing CSV result tables.

pub mod deep;
pub mod error;
pub mod experiment;
pub mod nonlinearity;
pub mod rls;
pub mod signal;
pub mod tape;

pub use deep::{DeepRlsModel, LayerParams, LayerTrace, Metrics, TrainConfig};
pub use error::{Error, Result};
pub use experiment::{ExperimentKind, ExperimentSpec, Metric, ResultRow};
pub use nonlinearity::Nonlinearity;
pub use rls::{CorrelationAccumulators, RlsState};
pub use signal::{DatasetCollection, GeneratorConfig, MixingMatrix, MixtureDataset, SourceSequence};
pub use tape::{NodeId, Op, Tape};
