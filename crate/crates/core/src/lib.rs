pub mod checksum;
pub mod cli;
pub mod config;
pub mod container;
pub mod datasets;
pub mod dba;
pub mod error;
pub mod eval;
pub mod lrp;
pub mod model;
pub mod nn;
pub mod seed;
pub mod signal;
pub mod timefreq;
pub mod transfer;

pub use error::{Error, Result};
