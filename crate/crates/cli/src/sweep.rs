//! Strong and weak scaling sweeps.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, ValueEnum};
use hinesim_core::{simulate, Network, RunConfig, RunOptions, RunReport};

use crate::config::{self, Overrides};
use crate::CmdResult;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Fixed problem size.
    Strong,
    /// Problem size proportional to the parallel units.
    Weak,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Axis {
    #[default]
    Workers,
    /// In-process ranks, one worker each unless `--workers` says otherwise.
    Ranks,
}

#[derive(Args, Clone, Debug)]
pub struct SweepArgs {
    pub kind: Kind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum, default_value_t = Axis::Workers)]
    pub axis: Axis,
    /// Values of the swept axis; the first is the baseline.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4])]
    pub points: Vec<usize>,
    /// Weak scaling: neurons per unit (default: the config's neuron count).
    #[arg(long)]
    pub per_unit: Option<usize>,
    /// Runs per point; the fastest counts.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Table destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional SVG line plot of time and efficiency.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub units: usize,
    pub neurons: usize,
    pub time_s: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub total_spikes: u64,
}

/// Config for one sweep point.
pub fn point_config(base: &RunConfig, kind: Kind, axis: Axis, units: usize, per_unit: usize) -> RunConfig {
    let mut cfg = base.clone();
    match axis {
        Axis::Workers => cfg.workers = units,
        Axis::Ranks => cfg.ranks = units,
    }
    if kind == Kind::Weak {
        cfg.neurons = per_unit * units;
    }
    cfg
}

/// Fastest wall time of `repeats` runs, with the last run's report.
pub fn time_config(cfg: &RunConfig, repeats: usize) -> hinesim_core::Result<(f64, RunReport)> {
    let net = Arc::new(Network::build(cfg)?);
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let outs = simulate(&net, &RunOptions::default())?;
        let report = RunReport::from_outcomes(&net, &outs);
        best = best.min(report.timing.wall_time_s);
        last = Some(report);
    }
    Ok((best, last.expect("at least one repeat")))
}

/// Speedup and efficiency relative to the first point. Strong: speedup is
/// `t0 / t` and efficiency divides by the unit ratio. Weak: efficiency is
/// `t0 / t` and speedup multiplies it back by the unit ratio.
pub fn tabulate(kind: Kind, measured: &[(usize, usize, f64, u64)]) -> Vec<Row> {
    let Some(&(u0, _, t0, _)) = measured.first() else { return Vec::new() };
    measured
        .iter()
        .map(|&(units, neurons, time_s, total_spikes)| {
            let ratio = units as f64 / u0 as f64;
            let (speedup, efficiency) = match kind {
                Kind::Strong => (t0 / time_s, t0 / time_s / ratio),
                Kind::Weak => (t0 / time_s * ratio, t0 / time_s),
            };
            Row { units, neurons, time_s, speedup, efficiency, total_spikes }
        })
        .collect()
}

pub fn run_sweep(base: &RunConfig, kind: Kind, axis: Axis, points: &[usize], per_unit: usize, repeats: usize) -> hinesim_core::Result<Vec<Row>> {
    let mut measured = Vec::with_capacity(points.len());
    for &units in points {
        let cfg = point_config(base, kind, axis, units, per_unit);
        cfg.validate()?;
        let (t, report) = time_config(&cfg, repeats)?;
        measured.push((units, cfg.neurons, t, report.total_spikes));
    }
    Ok(tabulate(kind, &measured))
}

pub fn to_tsv(axis: Axis, rows: &[Row]) -> String {
    let unit = match axis {
        Axis::Workers => "workers",
        Axis::Ranks => "ranks",
    };
    let mut s = format!("{unit}\tneurons\ttime_s\tspeedup\tefficiency\ttotal_spikes\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.6}\t{:.4}\t{:.4}\t{}", r.units, r.neurons, r.time_s, r.speedup, r.efficiency, r.total_spikes);
    }
    s
}

/// Two panels side by side: time per point and efficiency with the ideal line.
pub fn plot_svg(kind: Kind, rows: &[Row]) -> String {
    const W: f64 = 360.0;
    const H: f64 = 240.0;
    const PAD: f64 = 40.0;
    let umax = rows.iter().map(|r| r.units).max().unwrap_or(1) as f64;
    let tmax = rows.iter().map(|r| r.time_s).fold(0.0, f64::max).max(1e-9);
    let emax = rows.iter().map(|r| r.efficiency).fold(1.0, f64::max);
    let x = |ox: f64, u: usize| ox + PAD + (u as f64 / umax) * (W - 2.0 * PAD);
    let y = |v: f64, top: f64| H - PAD - (v / top) * (H - 2.0 * PAD);
    let line = |ox: f64, f: &dyn Fn(&Row) -> f64, top: f64| -> String {
        rows.iter().map(|r| format!("{:.1},{:.1}", x(ox, r.units), y(f(r), top))).collect::<Vec<_>>().join(" ")
    };
    let title = match kind {
        Kind::Strong => "strong scaling",
        Kind::Weak => "weak scaling",
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="monospace" font-size="11">"#, 2.0 * W);
    for (ox, label) in [(0.0, "time (s)"), (W, "efficiency")] {
        let _ = writeln!(
            s,
            r#"<path d="M{a},{PAD} V{b} H{c}" fill="none" stroke="black"/><text x="{a}" y="{t}">{label}</text>"#,
            a = ox + PAD,
            b = H - PAD,
            c = ox + W - PAD,
            t = PAD - 8.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">units</text>"#, ox + W - PAD - 30.0, H - PAD + 24.0);
        for r in rows {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}">{}</text>"#, x(ox, r.units) - 3.0, H - PAD + 12.0, r.units);
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="14">{title}</text>"#, W - 40.0);
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, line(0.0, &|r| r.time_s, tmax));
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, line(W, &|r| r.efficiency, emax));
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{y1:.1}" x2="{:.1}" y2="{y1:.1}" stroke="#ff7f0e" stroke-dasharray="4"/>"##,
        W + PAD,
        2.0 * W - PAD,
        y1 = y(1.0, emax)
    );
    s.push_str("</svg>\n");
    s
}

pub fn sweep(args: &SweepArgs) -> CmdResult {
    let base = config::load(args.config.as_deref(), &args.overrides)?;
    let per_unit = args.per_unit.unwrap_or(base.neurons);
    let rows = run_sweep(&base, args.kind, args.axis, &args.points, per_unit, args.repeats)?;
    let table = to_tsv(args.axis, &rows);
    match &args.out {
        Some(p) => std::fs::write(p, table)?,
        None => print!("{table}"),
    }
    if let Some(p) = &args.plot {
        std::fs::write(p, plot_svg(args.kind, &rows))?;
    }
    Ok(())
}
