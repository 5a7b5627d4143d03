//! Fourier Kolmogorov-Arnold networks (FKAN) for implicit neural
//! representations.
//!
//! The first layer places a learnable truncated Fourier series on every
//! input-to-latent edge; `tanh(omega0 * .)` hidden layers and a linear head
//! follow. Everything is differentiated with a small define-by-run tape and
//! trained with Adam on an L2 loss over coordinate samples.

pub mod array;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
mod fsutil;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod train;

pub use array::Array2;
pub use autodiff::{Gradients, Tape, Var};
pub use checkpoint::Checkpoint;
pub use data::{ImageBuffer, OccupancyVolume, SignalDataset, SignalKind};
pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use layers::{count_params, init_model, Architecture, HiddenInit, Model, ModelConfig};
pub use metrics::{iou, psnr, ssim, MetricResult, Psnr};
pub use optim::{adam_step, AdamState};
pub use parallel::Exec;
pub use train::{l2_loss, train, TrainConfig, TrainReport, Trainer};
