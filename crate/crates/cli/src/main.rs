use clap::{Parser, Subcommand};
use hinesim_cli::commands::{self, RunArgs, TraceCmd};
use hinesim_cli::launch::{self, LaunchArgs};
use hinesim_cli::sweep::{self, SweepArgs};
use hinesim_cli::validate::{self, ValidateArgs};
use hinesim_cli::exit;

/// Multi-rank compartmental neuron simulator.
#[derive(Parser)]
#[command(name = "hinesim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation (all ranks in-process, or one rank with --rank/--peers).
    Run(Box<RunArgs>),
    /// Strong or weak scaling sweep.
    Sweep(Box<SweepArgs>),
    /// Check the solver and transports against reference implementations.
    Validate(ValidateArgs),
    /// Render, merge or summarize CSV traces.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Start one local process per rank over loopback TCP and merge their output.
    LaunchLocal(Box<LaunchArgs>),
}

fn main() {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run(a) => commands::run(a),
        Cmd::Sweep(a) => sweep::sweep(a),
        Cmd::Validate(a) => validate::validate(a),
        Cmd::Trace(t) => commands::trace_cmd(t),
        Cmd::LaunchLocal(a) => launch::launch_local(a),
    };
    match res {
        Ok(()) => std::process::exit(exit::OK),
        Err(f) => {
            eprintln!("error: {f}");
            std::process::exit(f.code);
        }
    }
}
