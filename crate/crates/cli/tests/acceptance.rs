//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criteria whose premise is parallel hardware (scaling efficiency, wall-time
//! gains from balancing) are measured and reported on any machine but only
//! enforced when at least four cores are available.

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use hinesim_cli::sweep::{run_sweep, time_config, Axis, Kind};
use hinesim_cli::validate::{chain_vs_thomas, hines_vs_dense};
use hinesim_core::metrics::start_inversions;
use hinesim_core::trace::{self, worker_accounting, Kind as TraceKind};
use hinesim_core::{
    flop_budget, imbalance, simulate, summarize, Network, RankOutcome, RunConfig, RunOptions, RunReport, SizeModel,
    SpikeEvent, Strategy, TraceEvent,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    /// Needs at least this many cores to be meaningful.
    cores_needed: usize,
    detail: String,
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn fisher() -> SizeModel {
    SizeModel::Fisher { d1: 5.0, d2: 8.0, mean: 300.0, clamp: (10, 800) }
}

fn outcomes(cfg: &RunConfig, opts: &RunOptions) -> (Arc<Network>, Vec<RankOutcome>) {
    let net = Arc::new(Network::build(cfg).unwrap());
    let outs = simulate(&net, opts).unwrap();
    (net, outs)
}

fn canonical(outs: &[RankOutcome]) -> (Vec<SpikeEvent>, Vec<(u32, Vec<u64>)>) {
    let mut s: Vec<SpikeEvent> = outs.iter().flat_map(|o| o.spikes.iter().copied()).collect();
    s.sort_unstable();
    let mut v: Vec<(u32, Vec<u64>)> =
        outs.iter().flat_map(|o| o.voltages.iter().map(|(g, v)| (*g, v.iter().map(|x| x.to_bits()).collect()))).collect();
    v.sort_by_key(|(g, _)| *g);
    (s, v)
}

fn solver_correctness() -> Verdict {
    let t = Instant::now();
    let dense = hines_vs_dense(200, 2024);
    let chains = chain_vs_thomas(50, 2024);
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        name: "solver matches dense and Thomas oracles",
        pass: dense.passed() && chains.passed() && secs < 30.0,
        cores_needed: 1,
        detail: format!(
            "dense {}/{} max_err {:.2e}, thomas {}/{} max_err {:.2e}, {secs:.1}s",
            dense.cases - dense.failures.len(),
            dense.cases,
            dense.max_error,
            chains.cases - chains.failures.len(),
            chains.cases,
            chains.max_error
        ),
    }
}

fn cost_model() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // The default case at the smallest population that admits S=500.
    let mut cfgs = vec![RunConfig { neurons: 1000, ..RunConfig::default() }];
    let models = [SizeModel::Fixed(450), fisher(), SizeModel::Group20 { mean: 300.0, max_spread: 700 }];
    for i in 0..9 {
        let neurons = rng.random_range(30..=120);
        cfgs.push(RunConfig {
            neurons,
            synapses: rng.random_range(0..neurons),
            size_model: models[i % 3].clone(),
            local_steps: rng.random_range(1..=5),
            global_steps: rng.random_range(1..=5),
            ranks: rng.random_range(1..=4),
            workers: rng.random_range(1..=3),
            strategy: Strategy::ALL[i % 4],
            seed: rng.random(),
            ..RunConfig::default()
        });
    }
    let mut mismatches = Vec::new();
    for cfg in &cfgs {
        let (net, outs) = outcomes(cfg, &RunOptions::default());
        let counted: u64 = outs.iter().map(|o| o.flops).sum();
        if counted != flop_budget(cfg, &net.sizes) {
            mismatches.push(format!("N={} counted {counted}", cfg.neurons));
        }
    }
    let default_big = flop_budget(&RunConfig { neurons: 10_000, ..RunConfig::default() }, &vec![450; 10_000]);
    Verdict {
        id: 2,
        name: "flop counter equals predicted budget",
        pass: mismatches.is_empty() && default_big == 4_093_000_000,
        cores_needed: 1,
        detail: format!("{} configs, mismatches {mismatches:?}, N=10000 default predicts {default_big}", cfgs.len()),
    }
}

fn determinism() -> Verdict {
    let mut failures = Vec::new();
    let mut runs = 0;
    for seed in 1..=5 {
        let base = RunConfig { neurons: 1000, seed, ..RunConfig::default() };
        let (_, reference) = outcomes(&base, &RunOptions::default());
        let want = canonical(&reference);
        let mut variants: Vec<RunConfig> = vec![];
        variants.extend([2, 8].map(|workers| RunConfig { workers, ..base.clone() }));
        variants.extend([2, 4].map(|ranks| RunConfig { ranks, ..base.clone() }));
        variants.extend(Strategy::ALL.into_iter().filter(|s| *s != base.strategy).map(|strategy| RunConfig {
            strategy,
            ranks: 2,
            ..base.clone()
        }));
        for cfg in variants {
            runs += 1;
            let (_, outs) = outcomes(&cfg, &RunOptions::default());
            if canonical(&outs) != want {
                failures.push(format!("seed {seed} R={} W={} {}", cfg.ranks, cfg.workers, cfg.strategy.name()));
            }
        }
        if want.0.is_empty() {
            failures.push(format!("seed {seed} produced no spikes"));
        }
    }
    Verdict {
        id: 3,
        name: "spikes and voltages invariant across W, R, strategy",
        pass: failures.is_empty(),
        cores_needed: 1,
        detail: format!("{runs} variant runs over 5 seeds, differing {failures:?}"),
    }
}

fn transport_equivalence() -> Verdict {
    let cfg = RunConfig { neurons: 1000, ranks: 4, seed: 11, ..RunConfig::default() };
    let (net, outs) = outcomes(&cfg, &RunOptions::default());
    let inproc = RunReport::from_outcomes(&net, &outs);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tcp.report");
    let status = Command::new(env!("CARGO_BIN_EXE_hinesim"))
        .args(["launch-local", "--neurons", "1000", "--ranks", "4", "--seed", "11", "--report"])
        .arg(&path)
        .status()
        .unwrap();
    let tcp = std::fs::read_to_string(&path).ok().and_then(|t| RunReport::parse(&t).ok());
    let (pass, detail) = match (status.success(), tcp) {
        (true, Some(tcp)) => {
            let same = tcp.deterministic_text() == inproc.deterministic_text();
            (
                same,
                format!(
                    "4 processes: spikes {} vs {}, flops {} vs {}, {} buffer digests equal: {}",
                    tcp.total_spikes,
                    inproc.total_spikes,
                    tcp.total_flops,
                    inproc.total_flops,
                    tcp.buffer_digests.len(),
                    tcp.buffer_digests == inproc.buffer_digests
                ),
            )
        }
        (ok, _) => (false, format!("launch-local exit ok={ok}, report unreadable")),
    };
    Verdict { id: 4, name: "4-rank TCP run equals in-process run", pass, cores_needed: 1, detail }
}

fn strong_scaling() -> Verdict {
    let base = RunConfig { neurons: 10_000, size_model: SizeModel::Fixed(300), ..RunConfig::default() };
    let t = Instant::now();
    let rows = run_sweep(&base, Kind::Strong, Axis::Workers, &[1, 2, 4], 0, 1).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let eff = rows[2].efficiency;
    Verdict {
        id: 5,
        name: "strong scaling efficiency at W=4 >= 0.7",
        pass: eff >= 0.7 && secs < 300.0,
        cores_needed: 4,
        detail: format!(
            "times {:?} s, efficiency {eff:.3}, sweep {secs:.0}s, {} cores",
            rows.iter().map(|r| (r.time_s * 100.0).round() / 100.0).collect::<Vec<_>>(),
            cores()
        ),
    }
}

fn weak_scaling() -> Verdict {
    let base = RunConfig::default();
    let rows = run_sweep(&base, Kind::Weak, Axis::Workers, &[1, 2, 4], 1000, 1).unwrap();
    let ratio = rows[2].time_s / rows[0].time_s;
    let worst = rows.iter().map(|r| r.time_s / rows[0].time_s).fold(0.0, f64::max);
    Verdict {
        id: 6,
        name: "weak scaling time(W) <= 1.25 time(1)",
        pass: worst <= 1.25,
        cores_needed: 4,
        detail: format!(
            "times {:?} s, time(4)/time(1) {ratio:.2}, {} cores",
            rows.iter().map(|r| (r.time_s * 100.0).round() / 100.0).collect::<Vec<_>>(),
            cores()
        ),
    }
}

struct Balancing {
    verdicts: [Verdict; 2],
    traces: Vec<(String, Vec<TraceEvent>, usize)>,
}

fn balancing() -> Balancing {
    let base = RunConfig { neurons: 10_000, ranks: 4, size_model: fisher(), ..RunConfig::default() };
    let traced = RunOptions { tracing: true, ..RunOptions::default() };
    let measure = |strategy: Strategy| {
        let cfg = RunConfig { strategy, ..base.clone() };
        let (net, outs) = outcomes(&cfg, &traced);
        let report = RunReport::from_outcomes(&net, &outs);
        let ev = trace::merge(outs.into_iter().map(|o| o.trace).collect(), false);
        (imbalance(&net.partition), report.timing.wall_time_s, summarize(&ev).idle_fraction, ev)
    };
    let (imb_g, t_g, idle_g, ev_g) = measure(Strategy::GlobalSort);
    let (imb_l, t_l, idle_l, ev_l) = measure(Strategy::LocalSort);
    let a = imb_g > 3.0 * imb_l;
    let c = idle_l < idle_g;
    let b = t_l <= 0.85 * t_g;
    Balancing {
        verdicts: [
            Verdict {
                id: 7,
                name: "fisher balancing: imbalance ratio and idle fraction",
                pass: a && c,
                cores_needed: 1,
                detail: format!(
                    "(a) imbalance global {imb_g:.4} vs local {imb_l:.4}: {a}; (c) idle global {idle_g:.3} vs local {idle_l:.3}: {c}"
                ),
            },
            Verdict {
                id: 7,
                name: "fisher balancing: local_sort wall time <= 0.85 x global_sort",
                pass: b,
                cores_needed: 4,
                detail: format!("(b) wall global {t_g:.2}s local {t_l:.2}s ratio {:.3}, {} cores", t_l / t_g, cores()),
            },
        ],
        traces: vec![("R=4 global_sort".into(), ev_g, base.global_steps), ("R=4 local_sort".into(), ev_l, base.global_steps)],
    }
}

fn priority_failure() -> Verdict {
    let base = RunConfig { neurons: 1000, size_model: fisher(), ..RunConfig::default() };
    let order = RunOptions { record_order: true, ..RunOptions::default() };
    // Alternate the two modes and keep each one's best time.
    let (mut t_pri, mut t_uns) = (f64::INFINITY, f64::INFINITY);
    let mut inversions = 0;
    for _ in 0..3 {
        let cfg = RunConfig { strategy: Strategy::Priority, throttle: 256, ..base.clone() };
        let (net, outs) = outcomes(&cfg, &order);
        inversions = outs.iter().map(start_inversions).sum::<u64>();
        t_pri = t_pri.min(RunReport::from_outcomes(&net, &outs).timing.wall_time_s);
        let (t, _) = time_config(&RunConfig { strategy: Strategy::Unsorted, ..base.clone() }, 1).unwrap();
        t_uns = t_uns.min(t);
    }
    let rel = (t_pri - t_uns).abs() / t_uns;
    let sorted_cfg = RunConfig { strategy: Strategy::Priority, throttle: base.neurons, workers: 1, ..base.clone() };
    let (_, outs) = outcomes(&sorted_cfg, &order);
    let unthrottled: u64 = outs.iter().map(start_inversions).sum();
    let starts: usize = outs.iter().map(|o| o.start_order.len()).sum();
    Verdict {
        id: 8,
        name: "throttled priorities fail to sort, unthrottled sort exactly",
        pass: inversions > 0 && rel <= 0.05 && unthrottled == 0 && starts == base.neurons * 100,
        cores_needed: 1,
        detail: format!(
            "throttle 256: {inversions} inversions, wall {t_pri:.3}s vs unsorted {t_uns:.3}s ({:+.1}%); throttle N, W=1: {unthrottled} inversions over {starts} starts",
            100.0 * (t_pri - t_uns) / t_uns
        ),
    }
}

fn overlap_and_conservation(mut traces: Vec<(String, Vec<TraceEvent>, usize)>) -> [Verdict; 2] {
    let traced = RunOptions { tracing: true, ..RunOptions::default() };
    for (ranks, workers, strategy) in [(2, 1, Strategy::Unsorted), (2, 2, Strategy::Priority), (4, 1, Strategy::LocalSort), (4, 2, Strategy::GlobalSort)] {
        let cfg = RunConfig { neurons: 1000, ranks, workers, strategy, size_model: fisher(), ..RunConfig::default() };
        let (_, outs) = outcomes(&cfg, &traced);
        let ev = trace::merge(outs.into_iter().map(|o| o.trace).collect(), false);
        traces.push((format!("R={ranks} W={workers} {}", strategy.name()), ev, cfg.global_steps));
    }
    let no_overlap: Vec<&str> = traces.iter().filter(|(_, ev, _)| !summarize(ev).overlap_achieved).map(|(n, ..)| n.as_str()).collect();
    let mut bad = Vec::new();
    let mut worst_gap_per_event = 0.0f64;
    for (name, ev, g) in &traces {
        let s = summarize(ev);
        if s.exchange_intervals.values().any(|&n| n != *g) {
            bad.push(format!("{name}: exchange counts {:?}", s.exchange_intervals));
        }
        // Every worker's rows tile its lane up to the rank's end time.
        let mut rank_end = std::collections::BTreeMap::new();
        for e in ev.iter() {
            let t: &mut u64 = rank_end.entry(e.rank).or_default();
            *t = (*t).max(e.t_end_ns);
        }
        for ((rank, worker), (sum, last, n)) in worker_accounting(ev) {
            let total = rank_end[&rank];
            let gap = total.abs_diff(sum) as f64;
            worst_gap_per_event = worst_gap_per_event.max(gap / n as f64);
            if gap > 1_000.0 * n as f64 || last != total {
                bad.push(format!("{name} rank {rank} worker {worker}: {sum} of {total} ns"));
            }
        }
        if ev.iter().any(|e| e.kind == TraceKind::Compute && e.t_end_ns < e.t_start_ns) {
            bad.push(format!("{name}: negative interval"));
        }
    }
    [
        Verdict {
            id: 9,
            name: "exchange overlaps compute in every R>=2 run",
            pass: no_overlap.is_empty(),
            cores_needed: 1,
            detail: format!("{} traced runs, without overlap: {no_overlap:?}", traces.len()),
        },
        Verdict {
            id: 10,
            name: "trace conservation and G exchanges per rank",
            pass: bad.is_empty(),
            cores_needed: 1,
            detail: format!("{} traced runs, worst slack {worst_gap_per_event:.1} ns/event, problems {bad:?}", traces.len()),
        },
    ]
}

#[test]
fn acceptance() {
    let mut verdicts = vec![solver_correctness(), cost_model(), determinism(), transport_equivalence(), strong_scaling(), weak_scaling()];
    let bal = balancing();
    let [v7a, v7b] = bal.verdicts;
    verdicts.push(v7a);
    verdicts.push(v7b);
    verdicts.push(priority_failure());
    verdicts.extend(overlap_and_conservation(bal.traces));
    verdicts.sort_by_key(|v| v.id);

    let cores = cores();
    let mut enforced_failures = Vec::new();
    for v in &verdicts {
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && cores < v.cores_needed { " [needs >= 4 cores; not enforced]" } else { "" };
        println!("{status} criterion {}: {}: {}{note}", v.id, v.name, v.detail);
        if !v.pass && cores >= v.cores_needed {
            enforced_failures.push(v.id);
        }
    }
    assert!(enforced_failures.is_empty(), "criteria failed: {enforced_failures:?}");
}
