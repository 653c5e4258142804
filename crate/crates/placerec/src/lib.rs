//! File formats, checkpoints, run configuration and the subcommands behind
//! the `placerec` binary. The algorithms live in `placerec-core`.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod io;
