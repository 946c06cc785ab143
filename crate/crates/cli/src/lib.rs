//! Command-line front end: option resolution, SVG output and the subcommands.

pub mod commands;
pub mod config;
pub mod svg;
