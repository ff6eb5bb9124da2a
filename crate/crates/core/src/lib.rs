//! Committee configuration optimization and simulation for TEE-assisted
//! parallel BFT.
//!
//! - [`model`]: problem instances (nodes, delays, verification committee);
//! - [`cco`]: the configuration model, its checker and solvers;
//! - [`protocol`]: node state machines, trusted counters, total ordering;
//! - [`sim`]: the discrete-event simulator and experiment drivers;
//! - [`topology`]: synthetic instance generators.

pub mod cco;
pub mod model;
pub mod protocol;
pub mod sim;
pub mod topology;
