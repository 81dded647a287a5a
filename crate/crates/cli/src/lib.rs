//! Library surface of the pipeline CLI, so integration tests can drive
//! commands in-process.

pub mod commands;
pub mod config;
