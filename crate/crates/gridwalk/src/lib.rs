//! Discrete-event simulation of fully distributed task management on a
//! peer-to-peer grid. A single token performs a random walk over the
//! communication graph while carrying a circulating word (the visit history)
//! and a task-state set. Spanning trees derived from the word drive periodic
//! diffusions that synchronize the nodes' local views of task states,
//! reducing replicated computations relative to the token-only baseline.
//!
//! Modules:
//! - [`graph`]: grid topology and reproducible random instances
//! - [`wordtree`]: circulating word and the spanning tree derived from it
//! - [`tasks`]: task model, state lattice, local sets and selection
//! - [`protocol`]: per-node/token state machines (Active, Ds, Df, Dm)
//! - [`engine`]: deterministic discrete-event core
//! - [`metrics`]: efficiency, message counts, replication
//! - [`cli`]: experiment runner and CSV emission

pub mod cli;
pub mod engine;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod protocol;
pub mod tasks;
pub mod wordtree;

pub use error::{Result, SimError};
