//! Command-line driver, review service and Java toolchain stand-ins for
//! the respec repair pipeline.

pub mod cli;
pub mod mock;
pub mod script;
pub mod server;
pub mod setup;
