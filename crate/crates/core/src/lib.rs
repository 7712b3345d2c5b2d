//! Multi-agent path finding with inflated M* and its learning-assisted
//! variant, where individual policies come from a CNN + visual transformer
//! action model.

pub mod bench;
pub mod datagen;
pub mod error;
pub mod grid_world;
pub mod model;
pub mod observation;
pub mod policy;
pub mod search;

pub use error::{Error, Result};
