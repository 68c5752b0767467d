//! Library side of the experiment runner: config parsing, the pipeline-step
//! grammar, and the command implementations. The binary in `main.rs` is a
//! thin clap wrapper over [`commands`].

pub mod commands;
pub mod config;
pub mod error;
pub mod steps;
