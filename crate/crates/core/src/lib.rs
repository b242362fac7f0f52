//! Hybrid ANN/SNN frame-event semantic segmentation.
//!
//! Frames run through a conventional convolutional branch, events through a
//! spiking (LIF) branch fed with voxel grids. Three interaction blocks couple
//! the branches at every scale: a temporal-weighting injector (spikes into the
//! frame branch), an event-driven sparse injector (frame features into the
//! spiking branch at event locations) and a channel-selection fusion. An energy
//! profiler counts dense MACs and spike-gated accumulates.

pub mod dataset;
pub mod energy;
pub mod error;
pub mod events;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod network;
mod params;
pub mod spiking;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
