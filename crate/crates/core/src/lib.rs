//! Differentiable architecture search over graph neural network operations
//! that counter over-smoothing.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: a define-by-run tape over dense `f64` matrices and
//!   constant sparse adjacency products.
//! - [`graph`]: the validated [`Graph`] container, its JSON format and a
//!   stochastic block model generator.
//! - [`ops`]: the ten candidate operations (message passing layers,
//!   PairNorm, DropEdge and the DropAttr family).
//! - [`supernet`]: the block DAG with mixed operations, residual block
//!   stacking, architecture derivation and discrete models.
//! - [`objective`]: cross-entropy plus the pairwise smoothness penalty.
//! - [`search`]: Adam, the finite-difference architecture gradient, the
//!   search loop and retraining.
//! - [`metrics`]: accuracy, macro-F1, MAD, MAD^tgt, integrative ranking and
//!   the same-label pair probe.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod objective;
pub mod ops;
pub mod rng;
pub mod search;
pub mod supernet;

pub use error::{Error, Result};
pub use graph::{generate_sbm, load_graph, Graph, GraphFile, SbmConfig, Split};
pub use ops::{OpHyper, OpKind, OpMode, OpSpec};
