//! Library half of the `pplus` binary, shared with its integration tests.

pub mod commands;
pub mod run;
pub mod selftest;
