//! Command-line pipeline: generate a pool and tasks, train a teacher
//! repository, assess it, distill, and report.

pub mod args;
pub mod commands;
pub mod config;
pub mod table;

pub use args::Cli;
pub use commands::run;
