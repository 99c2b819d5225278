//! File formats, run orchestration and the command-line interface on top of
//! `inkspot-core`.

pub mod cli;
pub mod clt_io;
pub mod config;
pub mod error;
pub mod pgm;
pub mod run;
pub mod sim_io;
pub mod store;
pub mod tensor_io;

pub use error::{Error, ExitCode, Result};
