//! Time-aware attentive memory network for next-item recommendation.
//!
//! The crate is `no_std` with `alloc`: it holds the numeric substrate
//! (tensors, a reverse-mode tape, finite-difference checks), the model
//! components (embeddings, the time-gated recurrent unit, time-aware
//! attention, the FIFO memory and its multi-hop reader), the in-memory data
//! pipeline, the training loop and the ranking metrics. File formats and the
//! command-line driver live in the companion `mtam` crate.

#![no_std]

extern crate alloc;

pub mod attention;
pub mod baselines;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod recurrent;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Gradients, ParamId, ParamStore, Shape, Tensor};
