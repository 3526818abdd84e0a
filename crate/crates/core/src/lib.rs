//! Unpaired single-image dehazing with cycle-consistent adversarial training.
//!
//! The crate is self-contained: a small f64 tensor library with a gradient
//! tape ([`tensor`]), the atmospheric scattering model used to synthesize
//! training data ([`haze`]), Laplacian pyramids for full-resolution output
//! ([`pyramid`]), the generator/discriminator/feature networks ([`nets`]),
//! the training objective ([`losses`]) and loop ([`trainer`]), and image
//! I/O, augmentation and quality metrics ([`data`]).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod haze;
pub mod losses;
pub mod nets;
pub mod pyramid;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
