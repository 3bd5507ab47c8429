//! Grounded language learning through interaction with a scripted teacher.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod learner;
pub mod session;
pub mod teacher;
pub mod training;
pub mod vocab;
pub mod world;

pub use error::{Error, Result};
