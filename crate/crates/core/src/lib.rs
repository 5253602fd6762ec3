pub mod autodiff;
pub mod biomech;
pub mod body_model;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod priors;
pub mod rotations;

pub use error::{Error, Result};
