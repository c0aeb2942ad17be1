//! Selective state-space sequence classification.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`ops`], [`autodiff`], [`optim`]: dense tensors, forward
//!   kernels, a reverse-mode tape and AdamW.
//! - [`ssm`]: linear time-invariant SSMs (HiPPO init, discretization,
//!   recurrent and convolutional evaluation).
//! - [`scan`]: the selective scan with sequential and associative-scan
//!   evaluation.
//! - [`model`]: the Mamba block, the classifier, training, checkpoints and
//!   quantization.
//! - [`metrics`]: confusion-matrix metrics, ROC/AUC and report output.
//! - [`text`]: synthetic report corpora, tokenization, vocabulary, splits.

pub mod autodiff;
pub mod error;
pub mod fsio;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod scan;
pub mod seed;
pub mod ssm;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
