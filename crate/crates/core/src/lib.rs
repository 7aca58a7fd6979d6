//! Harmful-text detection that fuses a bag-of-embeddings text encoder with
//! graph attention over knowledge-graph entities linked in the text, trained
//! on cross-entropy plus a supervised contrastive term.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod knowledge;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
