//! Graph neural simulator laboratory.
//!
//! Generates periodic 2-D PDE trajectories, trains an encoder-processor-decoder
//! message-passing network to predict instantaneous time derivatives, rolls it
//! out with explicit Euler and scores it with relative L2 error.

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod graphs;
pub mod io;
pub mod model;
pub mod selection;
pub mod tensor;
pub mod training;

pub use error::{GnsError, Result};
