//! Factor models for asset-return panels.
//!
//! The crate pairs two reconstruction models behind one training and
//! evaluation protocol:
//!
//! - classical PCA ([`linalg`]): covariance, Jacobi eigendecomposition,
//!   top-k projection, explained variance;
//! - a KAN autoencoder ([`kan`], [`train`]): an encoder of per-edge learnable
//!   B-spline + SiLU functions feeding a linear decoder, trained by Adam with
//!   progressive grid extension and validation early stopping.
//!
//! Constraining every edge to be affine makes the autoencoder a linear map,
//! and its trained optimum coincides with the PCA projection; that reduction
//! is covered directly by the acceptance test suite.
//!
//! The [`pipeline`] module handles return ingestion and the leakage-free
//! protocol (chronological splits, train-only standardization, the train-only
//! data view), with every data access recorded in an [`audit`] log.

pub mod audit;
pub mod kan;
pub mod linalg;
pub mod modelfile;
pub mod pipeline;
pub mod splines;
pub mod synth;
pub mod train;

pub use audit::{AuditHandle, AuditLog, SplitTag};
pub use kan::{silu, silu_prime, EdgeActivation, KanLayer, LayerGradients, LayerMode};
pub use linalg::{
    covariance, eigh, pca_fit, pca_reconstruct, pca_transform, r_squared, CovMatrix, EigenResult,
    PcaModel,
};
pub use pipeline::{
    chronological_split, load_csv, standardize, train_view, write_csv, CsvSchema, ReturnPanel,
    SplitPanels, TrainOnlyView,
};
pub use splines::{refine_grid, spline_value, KnotVector, SplineCoeffs};
pub use train::{
    adam_step, fit_kan_pca, loss_and_gradients, pca_init, reconstruction_loss,
    regularization_penalty, train_stage, AdamState, BatchMode, InitKind, KanPcaModel, StageConfig,
    TrainConfig, TrainError, TrainHistory,
};
