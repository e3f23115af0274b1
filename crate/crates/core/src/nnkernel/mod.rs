//! Minimal dense neural-network kernel with hand-written reverse-mode
//! gradients: linear layers, elementwise activations, a multi-layer GRU,
//! diagonal-Gaussian policy math, Adam, finite-difference gradient checking
//! and a named-tensor checkpoint format.
//!
//! Every layer is generic over [`Scalar`] so the same code runs in `f64` for
//! gradient checks and in `f32` for training.

mod checkpoint;
mod gaussian;
mod gradcheck;
mod gru;
mod layers;
mod params;

pub use checkpoint::{load_params, save_params, CheckpointManifest, CHECKPOINT_MAGIC};
pub use gaussian::{gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grads, sample_gaussian};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use gru::{Gru, GruCell, GruStepCache};
pub use layers::{Activation, Linear, Mlp, MlpCache};
pub use params::{AdamConfig, Param, ParamId, ParamStore};

use ndarray::{Array2, NdFloat};
use thiserror::Error;

pub type Tensor2<S> = Array2<S>;

pub trait Scalar: NdFloat + Default {}
impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<S: Scalar>(x: f64) -> S {
    S::from(x).unwrap()
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch { op: &'static str, expected: String, got: String },
    #[error("optimizer step requested but no gradients were accumulated")]
    EmptyGradients,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_cols<S>(op: &'static str, x: &ndarray::ArrayView2<S>, cols: usize) -> Result<(), NnError> {
    if x.ncols() != cols {
        return Err(NnError::ShapeMismatch { op, expected: format!("(_, {cols})"), got: format!("{:?}", x.shape()) });
    }
    Ok(())
}
