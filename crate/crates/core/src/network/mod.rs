//! The spiking network: parameters, configuration, forward and reverse passes.

pub mod checkpoint;
mod config;
pub mod gradcheck;
mod layers;
mod model;
mod params;

pub use config::{Component, HeterogeneitySpec, InitLaw, ModelConfig, Task, DEFAULT_KERNEL_SIZE, THRESHOLD_FLOOR};
pub use layers::mix_seed as stream_seed;
pub use model::{BlockTape, DecoderTape, EncoderTape, ForwardOptions, Model, ModelOutput, Tape, KERNEL_DECAY};
pub use params::{Gradients, Param, ParamId, ParamStore, Role};
