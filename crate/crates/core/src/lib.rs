//! Damage classification of vacuum-insulated-glazing pillar images.

pub mod augment;
pub mod autograd;
pub mod cam;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod manifest;
pub mod model;
pub mod ops;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
