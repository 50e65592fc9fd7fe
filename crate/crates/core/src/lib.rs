//! Hierarchical predictive architecture: predictive units, layers, a
//! heterarchical graph of layers, reward modulation, innate circuits,
//! replay and planning, and the environments used to exercise them.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod hippocampus;
pub mod innate;
pub mod layer;
pub mod neuromod;
pub mod signal;
pub mod stats;
pub mod unit;

pub use error::{HicaError, Result};
pub use graph::{HetGraph, NodeEvent, NodeFeed, NodeId, TickInput, TickReport};
pub use layer::{FeedOutcome, Layer, LayerSpec, PoolEmission};
pub use neuromod::{Modulator, ModulatorParams};
pub use signal::{SeededRng, SignalVector, TokenCodec};
pub use unit::{Activation, Autoregressor, Channel, Mlp, Pooler};
