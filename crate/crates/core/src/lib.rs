//! Co-evolution of interpretable visual reinforcement-learning pipelines.
//!
//! A pipeline is a *vision module* (a bank of convolutional kernels, each
//! localizing one entity through the argmax of its response map) feeding a
//! *decision module* (a typed decision tree over the entity coordinates).
//! Kernel weights are optimized with CMA-ES, trees with strongly typed
//! genetic programming, and the two populations are paired against each
//! other on a small deterministic Pong-like environment. Behavioral
//! clustering (DBSCAN over probe responses) lets near-duplicate individuals
//! share a single fitness evaluation.

pub mod behavior;
pub mod cmaes;
pub mod coevo;
pub mod dtree;
mod error;
pub mod gp;
pub mod imaging;
pub mod minipong;
pub mod seed;
pub mod stats;
pub mod vision;

pub use error::{Error, Result};
