//! Configuration, serialization and the command layer behind `nls-npd`.

pub mod commands;
pub mod config;
pub mod output;
