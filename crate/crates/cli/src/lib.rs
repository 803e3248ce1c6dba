//! Command line front end and HTTP inference service for idblend bundles.

pub mod commands;
pub mod server;
pub mod wire;

pub use commands::{main_with, run, Cli};
