//! Discrete-to-continuum machinery for shallow spectral graph convolutional
//! networks on sampled manifolds.

pub mod error;
pub mod manifold;

pub mod graph;
pub mod transport;
pub mod spectra;
pub mod spectral_ops;
pub mod network;
pub mod erm;
pub mod pipeline;
pub use error::{GcnnError, Result};
