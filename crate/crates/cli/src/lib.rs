//! Command-line front end: scene archives, binary point and motion-field
//! files, PPM rendering and the subcommand handlers.

pub mod archive;
pub mod commands;
pub mod formats;
pub mod render;
