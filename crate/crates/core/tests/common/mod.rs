//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod decoding;
pub mod fd;
pub mod grammar;
pub mod persistence;
