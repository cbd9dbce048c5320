pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod dbm;
pub mod error;
pub mod eval;
pub mod math;
pub mod optim;
pub mod rbm;
pub mod regularizer;
pub mod train;

pub use error::{Error, Result};
