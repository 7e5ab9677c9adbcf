//! Block-structured supernet, derived architectures and the discrete model
//! built from them.

mod baseline;
pub mod cell;
mod network;

pub use baseline::GcnStack;
pub use cell::{arch_weights, derive_architecture, BlockSpec, DerivedArch, Kept, NodeChoice};
pub use network::{
    mixed_edge, mixed_edge_softmax, node_aggregate, EdgeOp, ForwardPass, Mixing, Model, NetShape, Network,
};
