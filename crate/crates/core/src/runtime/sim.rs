//! The two-level time loop on one rank, and in-process multi-rank runs.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam::channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

use super::engine::{EngineConfig, StartRecord, TaskEngine, TaskGroup};
use crate::error::{Error, Result};
use crate::exchange::{allgather, inproc_mesh, ExchangeError, ExchangeStats, GlobalBuffer, SpikeFrame, Transport};
use crate::network::Network;
use crate::neuron::{Neuron, SpikeEvent};
use crate::trace::{Kind, Label, TraceEvent, Tracer};

/// Knobs that change observation, not results.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub tracing: bool,
    pub record_order: bool,
    /// Shared time origin; ranks of one process should use the same one.
    pub t0: Option<Instant>,
}

/// Everything one rank produced.
#[derive(Clone, Debug)]
pub struct RankOutcome {
    pub rank: u32,
    /// Every spike detected on this rank, sorted.
    pub spikes: Vec<SpikeEvent>,
    /// Final voltages of owned neurons, by gid.
    pub voltages: Vec<(u32, Vec<f64>)>,
    pub flops: u64,
    /// Events in the global buffers this rank received, summed over rounds.
    pub exchanged_spikes: u64,
    pub frame_bytes: u64,
    pub wire_bytes: u64,
    /// Hex digest of each round's global buffer.
    pub buffer_digests: Vec<String>,
    pub trace: Vec<TraceEvent>,
    pub t_end_ns: u64,
    pub wall_time: Duration,
    pub start_order: Vec<StartRecord>,
}

struct Cell {
    neuron: Neuron,
    /// Spikes of the current global step.
    out: Vec<SpikeEvent>,
}

/// Dedicated thread that owns the transport and performs one allgather per
/// posted frame. Its trace row is worker index `W`.
struct CommLane {
    post: Sender<SpikeFrame>,
    picked_up: Receiver<()>,
    done: Receiver<std::result::Result<(GlobalBuffer, ExchangeStats), ExchangeError>>,
    handle: thread::JoinHandle<Tracer>,
}

/// One step's frame, waiting for the first compute task to hand it over.
#[derive(Clone)]
struct Launch {
    frame: Arc<Mutex<Option<SpikeFrame>>>,
    post: Sender<SpikeFrame>,
    picked_up: Receiver<()>,
}

impl Launch {
    /// Hand the frame to the lane; true for the one caller that did.
    fn post(&self) -> bool {
        match self.frame.lock().take() {
            Some(f) => self.post.send(f).is_ok(),
            None => false,
        }
    }

    /// Block until the lane has started the exchange, so it is in flight
    /// before the launching task finishes.
    fn await_pickup(&self) {
        let _ = self.picked_up.recv();
    }
}

impl CommLane {
    fn spawn<T: Transport + 'static>(mut transport: T, mut tracer: Tracer, max_frame: usize) -> Self {
        let (post, frames) = unbounded::<SpikeFrame>();
        let (ack, picked_up) = unbounded();
        let (results, done) = unbounded();
        let handle = thread::Builder::new()
            .name(format!("comm{}", transport.rank()))
            .spawn(move || {
                for frame in frames {
                    tracer.push(Kind::Exchange, Label::Step { g: frame.global_step });
                    let _ = ack.send(());
                    let r = allgather(&mut transport, &frame, max_frame);
                    tracer.pop();
                    let failed = r.is_err();
                    if results.send(r).is_err() || failed {
                        break;
                    }
                }
                tracer
            })
            .expect("spawn communication thread");
        Self { post, picked_up, done, handle }
    }

    fn launcher(&self, frame: SpikeFrame) -> Launch {
        Launch { frame: Arc::new(Mutex::new(Some(frame))), post: self.post.clone(), picked_up: self.picked_up.clone() }
    }

    fn recv(&self) -> Result<(GlobalBuffer, ExchangeStats)> {
        match self.done.recv() {
            Ok(r) => r.map_err(Error::from),
            Err(_) => Err(Error::InvalidParam("communication lane stopped".into())),
        }
    }

    fn finish(self, t_end_ns: u64) -> Vec<TraceEvent> {
        drop(self.post);
        self.handle.join().expect("communication thread panicked").finish(t_end_ns)
    }
}

/// Run all `G` global steps of rank `transport.rank()`.
pub fn run_rank<T: Transport + 'static>(net: Arc<Network>, transport: T, opts: &RunOptions) -> Result<RankOutcome> {
    let cfg = net.cfg.clone();
    let rank = transport.rank();
    if transport.ranks() != cfg.ranks {
        return Err(Error::Config {
            key: "ranks".into(),
            reason: format!("transport has {} ranks, config {}", transport.ranks(), cfg.ranks),
        });
    }
    let owned: Arc<Vec<u32>> = Arc::new(net.partition.assignment[rank].clone());
    let cells: Arc<Vec<Mutex<Cell>>> = Arc::new(
        owned
            .iter()
            .map(|&gid| net.build_neuron(gid).map(|neuron| Mutex::new(Cell { neuron, out: Vec::new() })))
            .collect::<Result<_>>()?,
    );
    let sizes: Arc<Vec<u64>> = Arc::new(owned.iter().map(|&g| net.sizes[g as usize] as u64).collect());
    let t0 = opts.t0.unwrap_or_else(Instant::now);
    let started = Instant::now();
    let engine = TaskEngine::new(&EngineConfig {
        rank: rank as u32,
        workers: cfg.workers,
        priority_mode: cfg.priority_mode(),
        throttle: cfg.throttle,
        tracing: opts.tracing,
        record_order: opts.record_order,
        t0,
    });
    let failure: Arc<Mutex<Option<Error>>> = Arc::new(Mutex::new(None));
    let max_frame = cfg.max_frame_bytes;
    let (d, g_steps) = (cfg.local_steps, cfg.global_steps);
    let comm = CommLane::spawn(transport, Tracer::new(opts.tracing, rank as u32, cfg.workers as u32, t0), max_frame);

    let mut sealed: Vec<SpikeEvent> = Vec::new();
    let mut all_spikes: Vec<SpikeEvent> = Vec::new();
    let mut stats = ExchangeStats::default();
    let mut exchanged = 0u64;
    let mut digests = Vec::with_capacity(g_steps);

    for g in 0..g_steps as u32 {
        let group = TaskGroup::new();
        let frame = SpikeFrame::new(rank as u32, g, std::mem::take(&mut sealed))?;
        {
            let (cells, sizes, owned, failure) = (cells.clone(), sizes.clone(), owned.clone(), failure.clone());
            let launch = comm.launcher(frame);
            engine.submit(&group, Kind::Schedule, u64::MAX, Label::Step { g }, move |ctx| {
                for l in 0..d as u16 {
                    let barrier = TaskGroup::new();
                    for k in 0..cells.len() {
                        let (cells, failure, launch) = (cells.clone(), failure.clone(), launch.clone());
                        let gid = owned[k];
                        ctx.spawn(&barrier, Kind::Compute, sizes[k], Label::Neuron { g, l, gid }, move |_| {
                            // Whichever task of the step starts first puts the
                            // exchange in flight.
                            let launched = l == 0 && launch.post();
                            let mut c = cells[k].lock();
                            let c = &mut *c;
                            match c.neuron.step(g, l) {
                                Ok(ev) => c.out.extend(ev),
                                Err(e) => {
                                    failure.lock().get_or_insert(e);
                                }
                            }
                            if launched {
                                launch.await_pickup();
                            }
                        });
                    }
                    ctx.wait(&barrier);
                    ctx.mark(Kind::Barrier, Label::Local { g, l });
                }
                if launch.post() {
                    launch.await_pickup();
                }
            });
        }
        engine.wait(&group);
        if let Some(p) = engine.take_panic() {
            return Err(Error::InvalidParam(format!("task panicked: {p}")));
        }
        let gathered = comm.recv();
        if let Some(e) = failure.lock().take() {
            return Err(e);
        }
        let (buffer, round) = gathered?;
        stats.frame_bytes += round.frame_bytes;
        stats.wire_bytes += round.wire_bytes;
        exchanged += buffer.len() as u64;
        digests.push(buffer.digest());

        // Delivery phase: received spikes feed the next global step.
        for ev in buffer.events() {
            let target = net.connectivity.targets_of(ev.source_gid as usize)[ev.synapse_slot as usize];
            let (owner, idx) = net.partition.owner[target.gid as usize];
            if owner as usize == rank {
                cells[idx as usize].lock().neuron.deliver(target.slot as usize, cfg.weight)?;
            }
        }
        for c in cells.iter() {
            sealed.append(&mut c.lock().out);
        }
        sealed.sort_unstable();
        all_spikes.extend_from_slice(&sealed);
    }
    let wall_time = started.elapsed();
    let start_order = engine.take_order_log();
    let (mut trace, t_end_ns) = engine.shutdown();
    trace.extend(comm.finish(t_end_ns));
    all_spikes.sort_unstable();
    let mut flops = 0;
    let mut voltages = Vec::with_capacity(cells.len());
    for c in cells.iter() {
        let c = c.lock();
        flops += c.neuron.flops();
        voltages.push((c.neuron.gid, c.neuron.v.clone()));
    }
    voltages.sort_by_key(|(g, _)| *g);
    Ok(RankOutcome {
        rank: rank as u32,
        spikes: all_spikes,
        voltages,
        flops,
        exchanged_spikes: exchanged,
        frame_bytes: stats.frame_bytes,
        wire_bytes: stats.wire_bytes,
        buffer_digests: digests,
        trace,
        t_end_ns,
        wall_time,
        start_order,
    })
}

/// Every rank of a run, hosted in this process over the in-process transport.
pub fn simulate(net: &Arc<Network>, opts: &RunOptions) -> Result<Vec<RankOutcome>> {
    let opts = RunOptions { t0: Some(opts.t0.unwrap_or_else(Instant::now)), ..opts.clone() };
    let results: Vec<Result<RankOutcome>> = thread::scope(|s| {
        let hs: Vec<_> = inproc_mesh(net.cfg.ranks)
            .into_iter()
            .map(|t| {
                let (net, opts) = (net.clone(), &opts);
                thread::Builder::new()
                    .name(format!("rank{}", t.rank()))
                    .spawn_scoped(s, move || run_rank(net, t, opts))
                    .expect("spawn rank thread")
            })
            .collect();
        hs.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    });
    // A peer-disconnect on one rank is usually the echo of a real error on
    // another; report the root cause.
    let mut first_err = None;
    let mut outs = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(o) => outs.push(o),
            Err(e) => {
                let echo = matches!(&e, Error::Exchange(crate::exchange::ExchangeError::PeerDisconnected { .. }));
                match &first_err {
                    None => first_err = Some(e),
                    Some(Error::Exchange(crate::exchange::ExchangeError::PeerDisconnected { .. })) if !echo => first_err = Some(e),
                    _ => {}
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(outs),
    }
}
