pub mod cli;
pub mod dataset;
pub mod error;
pub mod gradsuite;
pub mod inference;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod samcl;
pub mod segnet;
pub mod tensor;
pub mod tiaug;
pub mod training;

pub use error::{Error, Result};
pub use raster::{LabelMask, ThermalImage};
pub use tensor::{Graph, Tensor, Var};
