//! Scenario files and the commands behind the `mdfn` binary.

pub mod bounded;
pub mod commands;
pub mod scenario;
pub mod verify;
