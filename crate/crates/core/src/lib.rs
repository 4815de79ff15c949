//! Token influence scores for selective state-space (Mamba-style) language
//! models, computed from the layers' captured discrete parameters.

pub mod control;
pub mod error;
pub mod influence;
pub mod io;
pub mod experiments;
pub mod model;
pub mod sampling;
pub mod ssm;
pub mod verify;

pub use error::{Error, Result};
