//! Pipeline stages behind the `stancelab` binary.

pub mod config;
pub mod stages;
