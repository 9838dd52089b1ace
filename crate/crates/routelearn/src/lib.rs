//! Learns human route choice on a road network by combining classical
//! shortest-path search with a residual neural correction and a path
//! validator.
//!
//! A trip is a query (origin, departure interval, destination). A* under the
//! departure interval's traffic gives the fastest route; a small network
//! embeds the query, the traffic slice, and the static road conditions, and
//! corrects the A* edge vector with a learned per-edge adjustment; the
//! validator projects the resulting edge probabilities back onto an actual
//! path by running shortest path over the complement weights.
//!
//! The crate ships a synthetic-city generator with a transparent driver
//! preference model, classical baselines (Dijkstra by distance and time, A*,
//! a plain two-layer network, and demonstration-augmented training), the
//! route-overlap metric suite, and an experiment harness for data-sparsity
//! sweeps. See the `examples/` directory for one runnable program per
//! capability.

pub mod baseline;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod roadnet;
pub mod router;
pub mod traffic;
pub mod validator;

pub use error::{Error, Result};
