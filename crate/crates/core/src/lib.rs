pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod noise_bank;
pub mod spectrum;
pub mod tensor;
pub mod training;

pub use error::{GoasError, Result};
pub use tensor::{Real, Tensor};
