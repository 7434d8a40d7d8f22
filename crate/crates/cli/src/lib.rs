//! Command line and HTTP front end for `balloonseg_core`.

pub mod commands;
pub mod service;

pub use commands::{run_dsc, run_phantom, run_segment, CliError, PhantomFiles, SegmentArgs};
