//! Spiking neural networks with meta-learned, neuromodulated synaptic
//! plasticity for motor adaptation, plus the environment and training
//! harness around them.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod metagrad;
pub mod mlp;
pub mod network;
pub mod persist;
pub mod pipeline;
pub mod plasticity;
pub mod rl;
pub mod snn;

pub use error::{Result, SmaError};
