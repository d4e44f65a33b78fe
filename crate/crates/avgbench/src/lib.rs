//! Averaged benchmarking of brickwork circuits with space-time symmetric gates.
pub mod correlators;
pub mod ensembles;
pub mod error;
pub mod kak;
mod kernel;
pub mod pauli;
pub mod random;
pub mod scalar;
pub mod simulator;
pub mod spacetime;
pub mod supermap;

pub use error::{Error, Result};
pub use scalar::{Real, C};

/// Double-precision aliases.
pub type Gate = pauli::TwoQubitGate<f64>;
pub type Channel = pauli::Superoperator<f64>;
pub type Ptm = pauli::PauliTransferMatrix<f64>;
pub type Kak = kak::KakForm<f64>;
pub type Ensemble = ensembles::GateEnsemble<f64>;
pub type Circuit = correlators::ChannelCircuit<f64>;
pub type Spec = simulator::BrickworkSpec<f64>;
pub type Supermap = supermap::RescalingSupermap<f64>;
