pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod patterns;
pub mod scm_lab;
pub mod tensor_store;
mod util;

pub use error::{Error, Result};
