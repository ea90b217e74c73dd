//! Benchmark workloads: the DPSNN spiking network and a 4D stencil.

pub mod dpsnn;
pub mod fabric;
mod neuron;
pub mod stencil;

pub use neuron::{
    izhikevich_step, stdp_update, IzhParams, NeuronError, NeuronKind, NeuronState, SpikeEvent, StdpParams, Synapse,
};
