//! Sentiment-aware mixture-of-experts encoder with emotion-weighted listener
//! decoders for empathetic response generation.

pub mod autograd;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
mod rng;
pub mod training;

pub use error::{Error, Result};
