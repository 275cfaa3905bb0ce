//! Joint MRI reconstruction and per-pixel uncertainty estimation by pixel
//! classification.
//!
//! A small unrolled network with data-consistency steps reconstructs an image
//! from undersampled single-coil k-space. Instead of regressing intensities it
//! predicts, at every pixel, a distribution over quantized intensity classes.
//! The expectation of that distribution is the reconstruction and its variance
//! is the uncertainty map, both from one forward pass. A Monte Carlo dropout
//! baseline and an experiment harness are included for comparison.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod forward_model;
pub mod harness;
pub mod io;
pub mod net;
pub mod quantizer;
pub mod rng;
pub mod uncertainty;

pub use error::{PixcueError, Result};
pub use forward_model::{ComplexImage, KSpaceGrid, RealImage, SamplingMask};
pub use quantizer::{ClassProbabilityVolume, QuantizedImage};
pub use uncertainty::UncertaintyMap;
