//! Per-worker interval tracing, CSV persistence, summaries and SVG timelines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Compute,
    Exchange,
    Schedule,
    Idle,
    /// Zero-length mark at a local-step barrier release.
    Barrier,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Compute => "compute",
            Kind::Exchange => "exchange",
            Kind::Schedule => "schedule",
            Kind::Idle => "idle",
            Kind::Barrier => "barrier",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Kind::Compute, Kind::Exchange, Kind::Schedule, Kind::Idle, Kind::Barrier]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

/// What an interval was working on. Written as `-`, `g3`, `g3.l2` or `g3.l2.n17`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    #[default]
    None,
    Step { g: u32 },
    Local { g: u32, l: u16 },
    Neuron { g: u32, l: u16, gid: u32 },
}

impl Label {
    pub fn global_step(self) -> Option<u32> {
        match self {
            Label::None => None,
            Label::Step { g } | Label::Local { g, .. } | Label::Neuron { g, .. } => Some(g),
        }
    }

    pub fn local_step(self) -> Option<(u32, u16)> {
        match self {
            Label::Local { g, l } | Label::Neuron { g, l, .. } => Some((g, l)),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Label::None => f.write_str("-"),
            Label::Step { g } => write!(f, "g{g}"),
            Label::Local { g, l } => write!(f, "g{g}.l{l}"),
            Label::Neuron { g, l, gid } => write!(f, "g{g}.l{l}.n{gid}"),
        }
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "-" {
            return Ok(Label::None);
        }
        let bad = || format!("bad label `{s}`");
        let mut parts = s.split('.');
        let mut field = |prefix: char| -> std::result::Result<Option<u64>, String> {
            match parts.next() {
                None => Ok(None),
                Some(p) => p.strip_prefix(prefix).and_then(|x| x.parse().ok()).map(Some).ok_or_else(bad),
            }
        };
        let g = field('g')?.ok_or_else(bad)? as u32;
        let l = field('l')?;
        let n = field('n')?;
        if parts.next().is_some() {
            return Err(bad());
        }
        match (l, n) {
            (None, None) => Ok(Label::Step { g }),
            (Some(l), None) => Ok(Label::Local { g, l: l as u16 }),
            (Some(l), Some(gid)) => Ok(Label::Neuron { g, l: l as u16, gid: gid as u32 }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub rank: u32,
    pub worker: u32,
    pub kind: Kind,
    pub label: Label,
    pub t_start_ns: u64,
    pub t_end_ns: u64,
}

impl TraceEvent {
    pub fn duration_ns(&self) -> u64 {
        self.t_end_ns - self.t_start_ns
    }
}

/// Records one worker's timeline as back-to-back segments.
///
/// Each push/pop closes the segment that ran since the previous switch and
/// attributes it to the kind on top of the stack, so a worker's segments
/// tile `[0, t_end]`.
#[derive(Debug)]
pub struct Tracer {
    enabled: bool,
    rank: u32,
    worker: u32,
    t0: Instant,
    cursor: u64,
    stack: Vec<(Kind, Label)>,
    events: Vec<TraceEvent>,
}

impl Tracer {
    pub fn new(enabled: bool, rank: u32, worker: u32, t0: Instant) -> Self {
        Self { enabled, rank, worker, t0, cursor: 0, stack: vec![(Kind::Idle, Label::None)], events: Vec::new() }
    }

    pub fn disabled() -> Self {
        Self::new(false, 0, 0, Instant::now())
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn now_ns(&self) -> u64 {
        self.t0.elapsed().as_nanos() as u64
    }

    fn close(&mut self, at: u64) {
        let (kind, label) = *self.stack.last().expect("tracer stack never empties");
        let at = at.max(self.cursor);
        if at > self.cursor || matches!(kind, Kind::Compute | Kind::Exchange) {
            self.events.push(TraceEvent {
                rank: self.rank,
                worker: self.worker,
                kind,
                label,
                t_start_ns: self.cursor,
                t_end_ns: at,
            });
        }
        self.cursor = at;
    }

    pub fn push(&mut self, kind: Kind, label: Label) {
        if self.enabled {
            let now = self.now_ns();
            self.close(now);
            self.stack.push((kind, label));
        }
    }

    pub fn pop(&mut self) {
        if self.enabled {
            let now = self.now_ns();
            self.close(now);
            self.stack.pop();
            debug_assert!(!self.stack.is_empty());
        }
    }

    /// Zero-length mark at the current time.
    pub fn mark(&mut self, kind: Kind, label: Label) {
        if self.enabled {
            let t = self.now_ns().max(self.cursor);
            self.events.push(TraceEvent { rank: self.rank, worker: self.worker, kind, label, t_start_ns: t, t_end_ns: t });
        }
    }

    /// Close the open segment at `t_end_ns` and hand back the events.
    pub fn finish(mut self, t_end_ns: u64) -> Vec<TraceEvent> {
        if self.enabled {
            self.close(t_end_ns);
        }
        self.events
    }
}

pub const CSV_HEADER: [&str; 6] = ["rank", "worker", "kind", "label", "t_start_ns", "t_end_ns"];

pub fn write_csv<W: Write>(w: W, events: &[TraceEvent]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if events.is_empty() {
        wr.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    for e in events {
        wr.serialize(e).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<TraceEvent>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Trace(format!("unexpected trace header {header:?}")));
    }
    let events: Vec<TraceEvent> = rd.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if let Some(e) = events.iter().find(|e| e.t_end_ns < e.t_start_ns) {
        return Err(Error::Trace(format!("event ends before it starts: {e:?}")));
    }
    Ok(events)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Trace(e.to_string())
}

/// End of each rank's round-0 exchange, the cross-rank alignment point.
pub fn alignment_points(events: &[TraceEvent]) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == Kind::Exchange && e.label == Label::Step { g: 0 }) {
        out.insert(e.rank, e.t_end_ns);
    }
    out
}

/// Concatenate per-rank traces, optionally shifting ranks so their round-0
/// exchanges end together, and sort stably by start time.
pub fn merge(traces: Vec<Vec<TraceEvent>>, align: bool) -> Vec<TraceEvent> {
    let mut all: Vec<TraceEvent> = traces.into_iter().flatten().collect();
    if align {
        let points = alignment_points(&all);
        if let Some(&target) = points.values().max() {
            for e in &mut all {
                let shift = target - points.get(&e.rank).copied().unwrap_or(target);
                e.t_start_ns += shift;
                e.t_end_ns += shift;
            }
        }
    }
    all.sort_by_key(|e| e.t_start_ns);
    all
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSummary {
    /// Exchange time over all non-idle worker time.
    pub comm_fraction: f64,
    /// Idle time over all time of lanes that compute.
    pub idle_fraction: f64,
    /// Non-idle nanoseconds per rank.
    pub per_rank_busy_ns: BTreeMap<u32, u64>,
    /// Every exchange interval overlaps some compute interval on its rank.
    pub overlap_achieved: bool,
    pub exchange_intervals: BTreeMap<u32, usize>,
}

fn overlaps(a: &TraceEvent, b: &TraceEvent) -> bool {
    a.t_start_ns < b.t_end_ns && b.t_start_ns < a.t_end_ns
}

/// Lanes that only ever communicate. They are not compute resources, so
/// their waiting does not count towards `idle_fraction`.
fn comm_only_lanes(events: &[TraceEvent]) -> BTreeSet<(u32, u32)> {
    let mut exchange = BTreeSet::new();
    let mut computing = BTreeSet::new();
    for e in events {
        match e.kind {
            Kind::Exchange => exchange.insert((e.rank, e.worker)),
            Kind::Compute | Kind::Schedule => computing.insert((e.rank, e.worker)),
            Kind::Idle | Kind::Barrier => false,
        };
    }
    exchange.difference(&computing).copied().collect()
}

pub fn summarize(events: &[TraceEvent]) -> TraceSummary {
    let (mut exchange, mut busy, mut idle, mut worker_busy) = (0u64, 0u64, 0u64, 0u64);
    let mut per_rank_busy_ns = BTreeMap::new();
    let mut exchange_intervals = BTreeMap::new();
    let comm_lanes = comm_only_lanes(events);
    for e in events {
        let d = e.duration_ns();
        let worker_lane = !comm_lanes.contains(&(e.rank, e.worker));
        match e.kind {
            Kind::Idle if worker_lane => idle += d,
            Kind::Idle | Kind::Barrier => {}
            k => {
                busy += d;
                if worker_lane {
                    worker_busy += d;
                }
                *per_rank_busy_ns.entry(e.rank).or_insert(0) += d;
                if k == Kind::Exchange {
                    exchange += d;
                    *exchange_intervals.entry(e.rank).or_insert(0) += 1;
                }
            }
        }
    }
    let mut compute: BTreeMap<u32, Vec<&TraceEvent>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == Kind::Compute) {
        compute.entry(e.rank).or_default().push(e);
    }
    let overlap_achieved = events
        .iter()
        .filter(|e| e.kind == Kind::Exchange)
        .all(|x| compute.get(&x.rank).is_some_and(|cs| cs.iter().any(|c| overlaps(x, c))));
    let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    TraceSummary {
        comm_fraction: frac(exchange, busy),
        idle_fraction: frac(idle, idle + worker_busy),
        per_rank_busy_ns,
        overlap_achieved,
        exchange_intervals,
    }
}

/// Per `(rank, worker)`: recorded interval time versus span, for the
/// accounting check. Returns `(sum of durations, t_end of last segment,
/// interval count)`.
pub fn worker_accounting(events: &[TraceEvent]) -> BTreeMap<(u32, u32), (u64, u64, usize)> {
    let mut out: BTreeMap<(u32, u32), (u64, u64, usize)> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind != Kind::Barrier) {
        let slot = out.entry((e.rank, e.worker)).or_default();
        slot.0 += e.duration_ns();
        slot.1 = slot.1.max(e.t_end_ns);
        slot.2 += 1;
    }
    out
}

const ROW_H: u32 = 18;
const LEFT: u32 = 90;
const WIDTH: u32 = 1200;

fn color(kind: Kind) -> Option<&'static str> {
    match kind {
        Kind::Compute => Some("#1f77b4"),
        Kind::Exchange => Some("#ff7f0e"),
        Kind::Schedule => Some("#ffd700"),
        Kind::Idle | Kind::Barrier => None,
    }
}

/// Timeline: one row per worker, time on the horizontal axis. Output depends
/// only on the event set.
pub fn render_svg(events: &[TraceEvent]) -> String {
    let mut rows: BTreeMap<(u32, u32), Vec<&TraceEvent>> = BTreeMap::new();
    for e in events {
        rows.entry((e.rank, e.worker)).or_default().push(e);
    }
    let t_min = events.iter().map(|e| e.t_start_ns).min().unwrap_or(0);
    let t_max = events.iter().map(|e| e.t_end_ns).max().unwrap_or(0).max(t_min + 1);
    let span = (t_max - t_min) as f64;
    let px = |t: u64| LEFT as f64 + (t - t_min) as f64 / span * (WIDTH - LEFT - 10) as f64;
    let height = ROW_H * rows.len() as u32 + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="{WIDTH}" height="{height}" fill="#f4f4f4"/>"##);
    for (row, ((rank, worker), evs)) in rows.iter_mut().enumerate() {
        let y = 10 + row as u32 * ROW_H;
        let _ = writeln!(s, r#"<text x="4" y="{}">r{rank} w{worker}</text>"#, y + ROW_H - 6);
        evs.sort_by_key(|e| (e.t_start_ns, e.t_end_ns));
        // Merge same-coloured neighbours that meet at pixel resolution.
        let mut open: Option<(&str, f64, f64)> = None;
        let flush = |s: &mut String, o: Option<(&str, f64, f64)>| {
            if let Some((c, x0, x1)) = o {
                let w = (x1 - x0).max(0.5);
                let _ = writeln!(s, r#"<rect x="{x0:.1}" y="{y}" width="{w:.1}" height="{}" fill="{c}"/>"#, ROW_H - 2);
            }
        };
        for e in evs.iter() {
            let Some(c) = color(e.kind) else { continue };
            let (x0, x1) = (px(e.t_start_ns), px(e.t_end_ns));
            match open {
                Some((oc, ox0, ox1)) if oc == c && x0 - ox1 < 0.5 => open = Some((oc, ox0, ox1.max(x1))),
                prev => {
                    flush(&mut s, prev);
                    open = Some((c, x0, x1));
                }
            }
        }
        flush(&mut s, open);
    }
    let ly = height - 12;
    for (i, (name, c)) in [("compute", "#1f77b4"), ("exchange", "#ff7f0e"), ("schedule", "#ffd700")].iter().enumerate() {
        let x = LEFT + i as u32 * 110;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{c}"/>"#, ly - 9);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{name}</text>"#, x + 14);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{ly}">{:.3} ms</text>"#, WIDTH - 120, span / 1e6);
    s.push_str("</svg>\n");
    s
}
