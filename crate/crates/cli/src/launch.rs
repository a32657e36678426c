//! `launch-local`: one child process per rank over loopback TCP.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Args;
use hinesim_core::trace;
use hinesim_core::RunReport;

use crate::commands::{read_trace, write_trace};
use crate::config::{self, Overrides};
use crate::{exit, CmdResult, Failure};

#[derive(Args, Clone, Debug, Default)]
pub struct LaunchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Merged report; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Merged, rank-aligned CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub record_order: bool,
    /// Binary to launch per rank; defaults to this executable.
    #[arg(long, hide = true)]
    pub exe: Option<PathBuf>,
}

/// Loopback addresses on ports the OS just handed out. The listeners are
/// dropped before the children bind, so another process could in principle
/// grab a port in between; good enough for desk testing.
fn free_addresses(n: usize) -> std::io::Result<Vec<String>> {
    let listeners = (0..n).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<std::io::Result<Vec<_>>>()?;
    listeners.iter().map(|l| Ok(l.local_addr()?.to_string())).collect()
}

pub fn launch_local(args: &LaunchArgs) -> CmdResult {
    let cfg = config::load(args.config.as_deref(), &args.overrides)?;
    let dir = tempfile::tempdir()?;
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).map_err(|e| Failure::new(exit::OTHER, e))?)?;
    let peers = free_addresses(cfg.ranks)?.join(",");
    let exe = match &args.exe {
        Some(p) => p.clone(),
        None => std::env::current_exe()?,
    };
    let part = |rank: usize, ext: &str| dir.path().join(format!("rank{rank}.{ext}"));

    let children = (0..cfg.ranks)
        .map(|rank| {
            let mut cmd = Command::new(&exe);
            cmd.arg("run").arg("--config").arg(&cfg_path);
            cmd.args(["--rank", &rank.to_string(), "--peers", &peers]);
            cmd.arg("--report").arg(part(rank, "report"));
            if args.trace.is_some() {
                cmd.arg("--trace").arg(part(rank, "csv"));
            }
            if args.record_order {
                cmd.arg("--record-order");
            }
            cmd.stdout(std::process::Stdio::null());
            cmd.spawn()
        })
        .collect::<std::io::Result<Vec<_>>>()?;

    let mut codes = Vec::with_capacity(children.len());
    for mut c in children {
        codes.push(c.wait()?.code().unwrap_or(exit::OTHER));
    }
    if let Some(f) = child_failure(&codes) {
        return Err(f);
    }

    let reports = (0..cfg.ranks).map(|r| read_report(&part(r, "report"))).collect::<CmdResult<Vec<_>>>()?;
    let merged = RunReport::merge(&reports).map_err(|e| Failure::new(exit::TRANSPORT, e))?;
    match &args.report {
        Some(p) => std::fs::write(p, merged.to_text())?,
        None => print!("{}", merged.to_text()),
    }
    if let Some(out) = &args.trace {
        let traces = (0..cfg.ranks).map(|r| read_trace(&part(r, "csv"))).collect::<CmdResult<Vec<_>>>()?;
        write_trace(out, &trace::merge(traces, true))?;
    }
    Ok(())
}

/// A rank that failed for its own reason beats ranks that merely lost it.
fn child_failure(codes: &[i32]) -> Option<Failure> {
    let failed: Vec<(usize, i32)> = codes.iter().copied().enumerate().filter(|&(_, c)| c != exit::OK).collect();
    let &(rank, code) = failed.iter().find(|&&(_, c)| c != exit::TRANSPORT).or_else(|| failed.first())?;
    Some(Failure::new(code, anyhow::anyhow!("rank {rank} exited with code {code}")))
}

fn read_report(p: &Path) -> CmdResult<RunReport> {
    let text = std::fs::read_to_string(p)?;
    Ok(RunReport::parse(&text)?)
}
