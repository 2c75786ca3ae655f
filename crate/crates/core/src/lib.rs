//! Instrumented BERT-style encoder for Java source code with attention
//! analyses, syntactic probing and identifier-weighted clone detection.

pub mod analysis;
pub mod attention;
pub mod clone;
pub mod corpus;
pub mod csv;
pub mod encoder;
pub mod error;
pub mod lexer;
pub mod probing;
pub mod stats;
pub mod subtok;

pub use attention::AttentionTensor;
pub use error::{Error, Result};
