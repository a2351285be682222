//! Tagged image sequence to mel spectrogram to waveform translation.
//!
//! The crate bundles a small deterministic reverse-mode autodiff engine, the
//! DSP bridge between waveforms and normalized log-mel images, the
//! attention-guided 3-D encoder / 2-D decoder translator with its
//! discriminator, the training objectives, a synthetic paired corpus, the
//! trainer with leave-one-out evaluation, and the evaluation metrics.
//!
//! All numeric code is generic over [`Scalar`] (`f32` for training, `f64`
//! for reference checks); the aliases below name the common instantiations.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod scalar;
pub mod synthdata;
pub mod tensor;
pub mod trainer;
pub mod translator;

pub use autodiff::{Activation, Tape, Var};
pub use error::{Error, Result};
pub use optim::{AdamConfig, AdamState};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
