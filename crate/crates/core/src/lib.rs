//! Simulation and analysis of hierarchical differentially private count
//! releases.
//!
//! The crate models a geographic hierarchy with per-type counts, noises every
//! node with Laplace (ToyDown) or two-sided geometric (a miniature TopDown)
//! noise, and post-processes the noisy counts top-down into hierarchically
//! consistent estimates by per-family least squares. Around that core sit
//! closed-form error analytics (district error variance, cube-root optimal
//! budget splits, fragmentation scores), district generators (Greedy, Square,
//! Disconn, ReCom) and ecological regression under noise.
//!
//! Replicate loops run on rayon when the `parallel` feature is enabled (the
//! default); results are identical either way because every random stream is
//! derived from `(seed, replicate, node, column)`.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod districts;
pub mod er;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod hierarchy;
pub mod io;
pub mod mechanisms;
pub mod postprocess;

pub use error::{Error, Result};
pub use hierarchy::{CountTable, District, Hierarchy, NodeId, TypeSchema};
pub use mechanisms::{BudgetAllocation, NoiseLedger, Seed, Workload};
pub use postprocess::{AdjustedTable, Mode};
