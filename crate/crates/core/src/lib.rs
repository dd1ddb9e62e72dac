//! Spiking harmonic resonate-and-fire state-space models.
//!
//! The crate is organised bottom-up:
//!
//! * [`scan`]: parallel prefix scan for block-diagonal 2x2 linear recurrences.
//! * [`dynamics`]: discretized oscillator blocks, eigenvalues and neuron traces.
//! * [`spiking`]: threshold neurons and the surrogate gradient.
//! * [`network`]: encoder, stacked blocks, decoders and the reverse pass.
//! * [`train`]: optimizer, losses, training loop, search and ablations.
//! * [`energy`]: analytic operation and energy accounting.
//! * [`data`]: dataset container and synthetic tasks.

pub mod data;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod network;
pub mod ops;
pub mod par;
pub mod scan;
pub mod spiking;
pub mod train;

pub use error::{Error, Result};
