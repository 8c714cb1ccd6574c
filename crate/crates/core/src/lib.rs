pub mod autodiff;
pub mod cli;
pub mod domain;
pub mod error;
pub mod network;
pub mod oracle;
pub mod physics;
pub mod postprocess;
pub mod training;
pub mod validation;

pub use error::{Error, Result};
