//! `run` and `trace` subcommands.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Subcommand};
use hinesim_core::exchange::{connect_mesh, MeshOptions};
use hinesim_core::trace::{self, read_csv, render_svg, write_csv};
use hinesim_core::{run_rank, simulate, Network, RankOutcome, RunOptions, RunReport, TraceEvent};

use crate::config::{self, Overrides};
use crate::{exit, CmdResult, Failure};

#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// JSON config file; any key may also be given as a flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Record a trace and write it as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Record compute-task start order (adds `timing.inversions`).
    #[arg(long)]
    pub record_order: bool,
    /// Run only this rank, talking TCP to `--peers`.
    #[arg(long, requires = "peers")]
    pub rank: Option<usize>,
    /// host:port of every rank, in rank order.
    #[arg(long, value_delimiter = ',', requires = "rank")]
    pub peers: Vec<String>,
    /// Seconds to wait for the TCP mesh to come up.
    #[arg(long, default_value_t = 30)]
    pub connect_timeout: u64,
}

pub fn run(args: &RunArgs) -> CmdResult {
    let cfg = config::load(args.config.as_deref(), &args.overrides)?;
    let net = Arc::new(Network::build(&cfg)?);
    let opts = RunOptions { tracing: args.trace.is_some(), record_order: args.record_order, t0: None };
    let outs: Vec<RankOutcome> = match args.rank {
        Some(rank) => {
            if args.peers.len() != cfg.ranks {
                return Err(Failure::config("peers", format!("{} addresses for {} ranks", args.peers.len(), cfg.ranks)));
            }
            let mesh = MeshOptions { connect_timeout: Duration::from_secs(args.connect_timeout), ..MeshOptions::default() };
            let transport = connect_mesh(&args.peers, rank, &mesh).map_err(|e| on_rank(rank, e.into()))?;
            vec![run_rank(net.clone(), transport, &opts).map_err(|e| on_rank(rank, e.into()))?]
        }
        None => simulate(&net, &opts)?,
    };
    let report = RunReport::from_outcomes(&net, &outs);
    match &args.report {
        Some(p) => {
            std::fs::write(p, report.to_text())?;
            println!(
                "spikes={} flops={} wall_time_s={:.6}",
                report.total_spikes, report.total_flops, report.timing.wall_time_s
            );
        }
        None => print!("{}", report.to_text()),
    }
    if let Some(p) = &args.trace {
        let events = trace::merge(outs.into_iter().map(|o| o.trace).collect(), false);
        write_trace(p, &events)?;
    }
    Ok(())
}

fn on_rank(rank: usize, f: Failure) -> Failure {
    Failure { code: f.code, error: f.error.context(format!("rank {rank}")) }
}

#[derive(Subcommand, Clone, Debug)]
pub enum TraceCmd {
    /// Draw a CSV trace as an SVG timeline.
    Render {
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Combine per-rank CSV traces into one.
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Shift ranks so their first exchanges end together.
        #[arg(long)]
        align: bool,
    },
    /// Print communication, idle and overlap figures of a trace.
    Summarize { input: PathBuf },
}

pub fn trace_cmd(cmd: &TraceCmd) -> CmdResult {
    match cmd {
        TraceCmd::Render { input, out } => {
            let events = read_trace(input)?;
            std::fs::write(out, render_svg(&events))?;
        }
        TraceCmd::Merge { inputs, out, align } => {
            let traces = inputs.iter().map(|p| read_trace(p)).collect::<CmdResult<Vec<_>>>()?;
            write_trace(out, &trace::merge(traces, *align))?;
        }
        TraceCmd::Summarize { input } => {
            let s = trace::summarize(&read_trace(input)?);
            println!("comm_fraction={}", s.comm_fraction);
            println!("idle_fraction={}", s.idle_fraction);
            println!("overlap_achieved={}", s.overlap_achieved);
            for (rank, n) in &s.exchange_intervals {
                println!("exchange_intervals.r{rank}={n}");
            }
            for (rank, ns) in &s.per_rank_busy_ns {
                println!("busy_ns.r{rank}={ns}");
            }
        }
    }
    Ok(())
}

pub fn read_trace(p: &Path) -> CmdResult<Vec<TraceEvent>> {
    let f = File::open(p).map_err(|e| Failure::new(exit::OTHER, anyhow::Error::new(e).context(p.display().to_string())))?;
    Ok(read_csv(BufReader::new(f))?)
}

pub fn write_trace(p: &Path, events: &[TraceEvent]) -> CmdResult {
    let mut w = BufWriter::new(File::create(p)?);
    write_csv(&mut w, events)?;
    w.flush()?;
    Ok(())
}
