//! Pipeline, reports and figures for the abc-core construction.

pub mod config;
pub mod pipeline;
pub mod svg;

pub use config::RunConfig;
pub use pipeline::{run, Command, Run, Status};
