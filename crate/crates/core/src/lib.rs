//! Simulation and training of brainbox quantum autoencoders: dissipative
//! quantum neural networks that learn to denoise GHZ states.
//!
//! Module map:
//! - [`tensor`]: dense complex linear algebra on qubit registers.
//! - [`states`]: target states, fidelity, purity and Rényi entropy.
//! - [`channels`]: bit-flip, depolarizing and erasure noise, noisy datasets.
//! - [`network`]: topologies, per-neuron unitaries and the feedforward map.
//! - [`trainer`]: parameter-matrix updates of the per-neuron unitaries.
//! - [`experiments`]: sweeps, impedance tables, cross-tests, entropy flow.

pub mod channels;
pub mod error;
pub mod experiments;
pub mod network;
pub mod rng;
pub mod states;
pub mod tensor;
pub mod trainer;

mod factored;

pub use error::{Error, Result};
