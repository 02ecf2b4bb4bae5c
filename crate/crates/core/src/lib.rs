//! Siamese sampling and reasoning network for temporal sentence grounding.
//!
//! The pipeline samples an anchor sequence and `K` neighbouring siamese
//! sequences from a dense video, encodes them with a shared projection +
//! positional encoding + Bi-GRU encoder, fuses each with the query through
//! co-attention, merges siamese knowledge into the anchor stream and finally
//! predicts start/end distributions plus sub-frame boundary offsets.

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod heads;
pub mod interaction;
pub mod io;
pub mod model;
pub mod numcore;
pub mod sampling;
pub mod siamese;
pub mod training;

pub use error::{Error, Result};
