//! Configuration, run directories, timing, the scenario catalog, evaluation
//! and the command-line front end.

pub mod catalog;
pub mod cli;
pub mod config;
pub mod eval;
pub mod fixtures;
pub mod pipeline;
pub mod timing;
