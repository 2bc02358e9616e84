//! HTTP prediction API and the `persona` command-line tool.

pub mod api;
pub mod cli;
pub mod predict;
