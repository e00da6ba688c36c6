//! Teacher-guided contrastive feature alignment for dual-encoder multi-modal
//! classification.
//!
//! Student text and image encoders are projected into a frozen teacher's
//! embedding space with bidirectional InfoNCE losses, fused by one of several
//! interchangeable aggregation heads, and trained under a weighted multi-task
//! objective `alpha * L_con + L_ce`.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and all IO
//! live in the companion `clfa` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod alignment;
pub mod analysis;
pub mod data;
pub mod encoders;
mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
