//! Std companion to `clqr-core`: JSON/CSV formats, wall-clock timing, run
//! manifests, and the `clqr` command line.

pub mod app;
pub mod clock;
pub mod config;
pub mod formats;
pub mod manifest;

pub use app::{run, Cli, ExitStatus, Failure};
