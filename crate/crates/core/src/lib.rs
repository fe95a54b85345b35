//! Specification-guided automated program repair for Java codebases.
pub mod clock;
pub mod config;
pub mod diff;
pub mod engine;
pub mod digest;
pub mod index;
pub mod jml;
pub mod llm;
pub mod model;
pub mod patch;
pub mod proc;
pub mod prompt;
pub mod session;
pub mod spec;
pub mod taxonomy;
pub mod validate;
