//! Files, experiments and the command line around `ldperm-core`.

pub mod config;
pub mod experiment;
pub mod io;

pub use ldperm_core as core;
