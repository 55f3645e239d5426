//! Block-based neural architecture search at desk scale: a bounded
//! two-dimensional particle swarm evolves the hyperparameters of one dense
//! block, an early-stopping trainer scores candidates on a data subset, and
//! the evolved block is stacked progressively to select the final network.
//! A server/worker harness distributes fitness evaluation, and the whole
//! pipeline is deterministic for a fixed seed.

pub mod data;
pub mod disteval;
pub mod fitness;
pub mod gradcheck;
pub mod netspec;
pub mod stacker;
pub mod stats;
pub mod swarm;
pub mod trainer;

pub use netspec::{BlockSpec, MemoryBudget, NetworkGraph};

