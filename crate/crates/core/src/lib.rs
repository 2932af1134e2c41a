pub mod config;
pub mod costs;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod math;
pub mod metrics;
pub mod neural;
pub mod operators;
pub mod oracle;
pub mod svg;
pub mod trainer;
pub use error::{Error, Result};
