//! BPMN-to-contract compiler and a discrete-event runtime for nested trade
//! transactions over a simulated ledger, with fragment-level repair.
//!
//! The pipeline, bottom-up:
//!
//! 1. [`bpmn`] parses the supported BPMN subset into a [`bpmn::ProcessModel`].
//! 2. [`graph`] and [`region`] turn it into a DAG and enumerate its
//!    single-entry/single-exit regions; [`dataflow`] computes the variable
//!    sets flowing into and out of a region.
//! 3. [`scenario`] supplies task behaviors and binds them to the model.
//! 4. [`compiler`] turns a bound model and a transaction plan into versioned
//!    contract units behind a [`compiler::Router`].
//! 5. [`runtime`] executes the units against the [`ledger`].
//! 6. [`repair`] maps failures back to fragments, validates replacements and
//!    activates new unit versions.

pub mod bpmn;
pub mod canon;
pub mod compiler;
pub mod dataflow;
pub mod expr;
pub mod graph;
pub mod ledger;
pub mod region;
pub mod repair;
pub mod runtime;
pub mod scenario;
#[cfg(feature = "testkit")]
pub mod testkit;
