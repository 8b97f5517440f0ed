pub mod corpus;
pub mod embed_refine;
pub mod error;
pub mod lexicon;
pub mod neural;
pub mod sdm;
pub mod trainer;
pub mod analysis;
pub mod cli;

pub use error::{Error, Result};
