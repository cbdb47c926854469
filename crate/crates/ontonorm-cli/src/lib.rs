//! Library surface of the `ontonorm` binary: argument definitions, config
//! precedence, and command implementations. Split out so integration tests
//! can introspect the clap command tree.

pub mod args;
pub mod config;
pub mod run;
