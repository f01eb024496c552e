//! Library surface of the experiment CLI, shared with its integration
//! tests: run configs, manifests, command implementations, and plotting.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod util;
