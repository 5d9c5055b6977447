pub mod cli;
pub mod controller;
pub mod error;
pub mod field;
pub mod graph;
pub mod grid;
pub mod metrics;
pub mod qp;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
