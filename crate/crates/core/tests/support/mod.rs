//! Shared fixtures for integration tests: a seeded synthetic Java project
//! and oracles written independently of the indexer.
#![allow(dead_code)]

pub mod corpus;
pub mod oracle;
