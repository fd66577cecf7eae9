//! File formats, IO and the command-line front end for `harakat-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod vocab;
pub mod wav;

pub use error::{AppError, Result};
