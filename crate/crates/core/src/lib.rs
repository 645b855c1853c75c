//! Joint knowledge-graph embedding with an entity-level rotation encoder and
//! a type-level translation encoder, plus training, filtered link-prediction
//! evaluation and type-embedding export.

pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod gradients;
pub mod kg_data;
pub mod params;
pub mod training;

pub use error::{Error, Result};
pub use kg_data::{Split, Triple, TripleStore};
pub use params::{Hyperparams, ModelParams};
