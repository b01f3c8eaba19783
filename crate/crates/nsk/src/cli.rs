//! The `nsk` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use serde_json::json;

use crate::artifacts::OutDir;
use crate::commands::{run, Command, RunError, RunOptions};
use crate::scenario::load_scenario;

/// Simulation and null-control runs driven by a JSON scenario.
#[derive(Debug, Parser)]
#[command(name = "nsk", version)]
pub struct Cli {
    pub command: Command,
    /// Scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "nsk-out")]
    pub out: PathBuf,
    /// Seed of the randomized eigenvalue iterations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Worker count from `NSK_THREADS`, if set.
fn threads() -> Result<Option<usize>, RunError> {
    match std::env::var("NSK_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Usage(format!("NSK_THREADS = {v:?} must be a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

fn execute(cli: &Cli, out: &mut OutDir) -> Result<Vec<String>, RunError> {
    let sc = load_scenario(&cli.scenario)?;
    out.json("scenario.json", &sc)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| RunError::Usage(e.to_string()))?;
    let opts = RunOptions { seed: cli.seed };
    pool.install(|| run(&sc, cli.command, &opts, out))
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for invalid input, 2 for numerical failures.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut out = match OutDir::create(&cli.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", cli.out.display());
            return 1;
        }
    };
    let (code, lines) = match execute(&cli, &mut out) {
        Ok(lines) => (0, lines),
        Err(e) => {
            eprintln!("error: {e}");
            let _ = out.json("error.json", &e.record());
            (e.exit_code(), Vec::new())
        }
    };
    let status = json!({
        "command": cli.command.name(),
        "status": if code == 0 { "ok" } else { "error" },
        "exit_code": code,
        "artifacts": out.written(),
    });
    if let Err(e) = out.json("status.json", &status) {
        eprintln!("error: cannot write status: {e}");
        return if code == 0 { 1 } else { code };
    }
    for l in lines {
        println!("{l}");
    }
    code
}
