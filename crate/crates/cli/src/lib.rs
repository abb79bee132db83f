//! Library half of the `ckalab` command: comparison tables and golden
//! fixtures, kept here so tests can call them directly.

pub mod compare;
pub mod vectors;
