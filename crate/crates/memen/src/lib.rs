//! Extractive question answering over pre-tagged passages: multi-layer
//! token embeddings (word, char-CNN, skip-gram POS/NER tags), a gated
//! multi-hop full-orientation matching memory network, and a pointer-network
//! boundary decoder. All math runs on the reverse-mode tape in [`tensor`].

pub mod data;
pub mod encoder;
pub mod error;
pub mod memory;
pub mod model;
pub mod params;
pub mod pointer;
pub mod tagembed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{gradient_check, Tape, Tensor, Var};
