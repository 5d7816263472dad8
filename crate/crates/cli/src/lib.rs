//! Library surface of the command line driver, exposed so integration tests
//! can parse run records and configs with the same types the binary writes.

pub mod config;
pub mod run;
