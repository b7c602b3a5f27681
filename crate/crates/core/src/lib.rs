//! Unsupervised neural combinatorial optimization for minimum vertex cover and
//! maximum clique, with test-time shrink-and-perturb adaptation.
//!
//! The pipeline: a GIN ([`gnn`]) maps a graph and a random one-hot input to
//! per-node probabilities; a penalized multilinear loss ([`objectives`]) is
//! minimized over an instance distribution and then per test instance
//! ([`adapt`]); probabilities are turned into feasible solutions by sequential
//! decoding ([`decode`]) and scored against exact optima ([`oracle`]) by the
//! benchmark harness ([`bench`]).

pub mod adapt;
pub mod bench;
pub mod decode;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod objectives;
pub mod oracle;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
