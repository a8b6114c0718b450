//! Deep factorized token embeddings.
//!
//! Tokens are mapped to a small `n`-dimensional vector, expanded to `k`
//! dimensions through a stack of hierarchical group linear layers, and
//! reduced to the `m`-dimensional input of a context model. The crate holds
//! the autodiff engine the layers run on, the expansion variants, the
//! embedding unit and its inference cache, a word-level LSTM language model
//! harness, and analysis tools for trained embedding tables.

pub mod analysis;
pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod embedder;
pub mod corpus;
pub mod error;
pub mod lm;
pub mod params;
pub mod run;
pub mod tape;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use params::{Bindings, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
