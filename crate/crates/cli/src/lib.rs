//! `gdmap` command line. Every subcommand validates its flags, runs, and
//! writes CSV files plus `manifest.json` into `--out`.
//!
//! Exit codes: 0 on success, 1 on domain errors (bad values, unusable data,
//! I/O), 2 on usage errors reported by the argument parser.

// `!(x > 0.0)` is deliberate: NaN must fail every validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::Path;

use clap::{Parser, Subcommand};
use gdmap::data::{write_manifest, Manifest};
use gdmap::par::{with_jobs, Execution};
use gdmap::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

pub use args::{CommonArgs, DataArgs, InitArgs, ModelArgs, RunArgs};
pub use commands::{
    EtaECmd, GridCmd, MwsLengthCmd, NonsingCmd, ReproduceCmd, SpectrumCmd, SweepCmd, TrajectoryCmd, TrapCmd,
};

use args::bad;
use commands::Job;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(
    name = "gdmap",
    version,
    about = "Gradient descent as a discrete dynamical system: spectra, trajectories and trapping-region sweeps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Hessian spectrum at a parameter vector, optionally classified as a fixed point
    #[command(allow_negative_numbers = true)]
    Spectrum(SpectrumCmd),
    /// One gradient descent (or SGD) trajectory
    #[command(allow_negative_numbers = true)]
    Trajectory(TrajectoryCmd),
    /// Trap ratio over a grid of step sizes
    #[command(allow_negative_numbers = true)]
    Sweep(SweepCmd),
    /// Trap ratio at a single step size
    #[command(allow_negative_numbers = true)]
    Trap(TrapCmd),
    /// Length of the weakly stable part of {xy = 1} for the two-neuron example
    #[command(allow_negative_numbers = true)]
    MwsLength(MwsLengthCmd),
    /// Critical step size 2 / inf lambda_min_nonzero over the minima
    #[command(allow_negative_numbers = true)]
    EtaE(EtaECmd),
    /// How often det(I - eta H) vanishes on random parameters
    #[command(allow_negative_numbers = true)]
    Nonsing(NonsingCmd),
    /// Trap ratios for a depth-by-step-size grid
    #[command(allow_negative_numbers = true)]
    Grid(GridCmd),
    /// Regenerate the datasets behind a named figure
    #[command(allow_negative_numbers = true)]
    Reproduce(ReproduceCmd),
    /// Check a JSON config file without running anything
    ValidateConfig {
        /// JSON object with a "command" key and flag overrides
        file: std::path::PathBuf,
    },
}

trait Runnable: Serialize + DeserializeOwned {
    const NAME: &'static str;
    fn common(&self) -> &CommonArgs;
    fn prepare(&self) -> Result<Job>;
}

macro_rules! runnable {
    ($($ty:ty => $name:literal),* $(,)?) => {$(
        impl Runnable for $ty {
            const NAME: &'static str = $name;
            fn common(&self) -> &CommonArgs {
                &self.common
            }
            fn prepare(&self) -> Result<Job> {
                <$ty>::prepare(self)
            }
        }
    )*};
}

runnable! {
    SpectrumCmd => "spectrum",
    TrajectoryCmd => "trajectory",
    SweepCmd => "sweep",
    TrapCmd => "trap",
    MwsLengthCmd => "mws-length",
    EtaECmd => "eta-e",
    NonsingCmd => "nonsing",
    GridCmd => "grid",
    ReproduceCmd => "reproduce",
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs a parsed command and returns the lines it would print.
pub fn dispatch(command: Command) -> Result<Vec<String>> {
    match command {
        Command::Spectrum(c) => execute(c),
        Command::Trajectory(c) => execute(c),
        Command::Sweep(c) => execute(c),
        Command::Trap(c) => execute(c),
        Command::MwsLength(c) => execute(c),
        Command::EtaE(c) => execute(c),
        Command::Nonsing(c) => execute(c),
        Command::Grid(c) => execute(c),
        Command::Reproduce(c) => execute(c),
        Command::ValidateConfig { file } => validate_config(&file),
    }
}

fn with_config<C: Runnable>(cmd: C) -> Result<C> {
    match cmd.common().config.as_str() {
        "none" => Ok(cmd),
        path => config::overlay(&cmd, &config::read_object(Path::new(path))?, C::NAME),
    }
}

/// Flag values recorded in the manifest: everything except where the output
/// goes and how many threads computed it, which do not affect the results.
fn recorded_args<C: Runnable>(cmd: &C) -> Value {
    let mut v = serde_json::to_value(cmd).expect("flag structs serialize");
    if let Value::Object(map) = &mut v {
        for key in ["out", "jobs", "config"] {
            map.remove(key);
        }
    }
    v
}

fn execute<C: Runnable>(cmd: C) -> Result<Vec<String>> {
    let cmd = with_config(cmd)?;
    let common = cmd.common().clone();
    if common.jobs == 0 {
        return Err(bad("jobs", "must be at least 1"));
    }
    let job = cmd.prepare()?;
    let out = common.out.as_path();
    std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    let report = with_jobs(common.jobs, || job(out, Execution::Parallel))?;

    let mut manifest = Manifest::new(
        json!({ "name": C::NAME, "version": env!("CARGO_PKG_VERSION"), "args": recorded_args(&cmd) }),
        common.seed,
    );
    manifest.arch = report.arch;
    manifest.data = report.data;
    manifest.run_cfg = report.run_cfg;
    manifest.outputs = report.outputs;
    write_manifest(&manifest, &out.join(MANIFEST_NAME))?;

    let mut lines = report.summary;
    lines.push(format!("wrote {} and {} file(s) to {}", MANIFEST_NAME, manifest.outputs.len(), out.display()));
    Ok(lines)
}

fn check<C: Runnable>(cmd: C, config: &Map<String, Value>) -> Result<()> {
    config::overlay(&cmd, config, C::NAME)?.prepare().map(drop)
}

fn validate_config(file: &Path) -> Result<Vec<String>> {
    let config = config::read_object(file)?;
    let name = match config.get("command") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(bad("command", "expected a string")),
        None => return Err(bad("command", "missing; name the subcommand this file configures")),
    };
    if name == "validate-config" {
        return Err(bad("command", "must name a runnable subcommand"));
    }
    let defaults = Cli::try_parse_from(["gdmap", name.as_str()])
        .map_err(|_| bad("command", format!("unknown subcommand `{name}`")))?;
    match defaults.command {
        Command::Spectrum(c) => check(c, &config),
        Command::Trajectory(c) => check(c, &config),
        Command::Sweep(c) => check(c, &config),
        Command::Trap(c) => check(c, &config),
        Command::MwsLength(c) => check(c, &config),
        Command::EtaE(c) => check(c, &config),
        Command::Nonsing(c) => check(c, &config),
        Command::Grid(c) => check(c, &config),
        Command::Reproduce(c) => check(c, &config),
        Command::ValidateConfig { .. } => unreachable!("rejected above"),
    }?;
    Ok(vec![format!("{}: valid `{name}` config", file.display())])
}
