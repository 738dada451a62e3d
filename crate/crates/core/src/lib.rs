//! Single-image de-raining with a conditional generative adversarial network.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense tensors and a tape-based reverse-mode
//!   differentiation engine with the convolution, normalisation and activation
//!   operators the networks need.
//! * [`models`]: the skip-connected generator, the conditional patch
//!   discriminator and the frozen perceptual feature network.
//! * [`losses`]: Euclidean, perceptual and adversarial terms and their weighted
//!   combination.
//! * [`rain`]: procedural streak rendering and paired dataset synthesis.
//! * [`metrics`]: PSNR, SSIM, UQI and VIF on the luminance channel.
//! * [`train`]: Adam, alternating discriminator/generator updates and the
//!   training loop.
//! * [`io`]: image codecs, the checkpoint format, dataset layout and run
//!   configuration files.
//! * [`gradcheck`]: the finite-difference verification suite.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod rain;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
