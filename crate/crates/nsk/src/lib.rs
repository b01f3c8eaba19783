//! Scenario files, artifact formats and the `nsk` command line on top of
//! [`nsk_core`].

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod nskf;
pub mod scenario;

pub use commands::{run, Command, RunError, RunOptions};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
