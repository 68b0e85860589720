//! Desk-scale simulator and planner for partition-based full-graph GNN
//! training with host-memory offloading.
//!
//! The pipeline mirrors a multi-device trainer that keeps vertex data in
//! host memory and streams chunk subgraphs through device buffers:
//!
//! 1. [`graph`] loads and indexes the input graph.
//! 2. [`partition`] builds the two-level (partition × chunk) split.
//! 3. [`plan`] derives deduplicated transfer sets, volumes, the transfer
//!    cost model, chunk reorganization and the device buffer layout.
//! 4. [`sim`] moves real rows between a simulated host and devices while
//!    metering every transfer class.
//! 5. [`engine`] runs GCN/GAT training epochs on top of the simulator and
//!    ships a monolithic reference trainer for parity checks.

pub mod config;
pub mod engine;
pub mod error;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod par;
pub mod partition;
pub mod plan;
pub mod sets;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
pub use graph::Graph;
pub use matrix::{DenseMatrix, Real};
