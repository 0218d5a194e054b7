pub mod analysis;
pub mod augment;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod objective;
pub mod pipeline;
pub mod retrieval;
pub mod synthetic;
pub mod tokenizer;

pub use error::{Error, Result};
