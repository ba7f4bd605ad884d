pub mod corpus;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
