pub mod augment;
pub mod config;
pub mod convnet;
pub mod csv;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod objectives;
pub mod par;
pub mod rng;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
