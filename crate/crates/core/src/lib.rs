pub mod data;
pub mod error;
pub mod checkpoint;
pub mod cli;
pub mod fa_block;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod params;
pub mod recurrent;
pub mod sample;
pub mod tensor;

pub use error::{Error, Result};
pub use fa_block::FaVariant;
pub use model::{LossConfig, Model, ModelConfig, ModelParams};
pub use sample::{Label, VideoSample};
pub use tensor::{Real, Tape, Tensor, Var};
