use std::sync::Arc;

use hinesim_core::exchange::{EVENT_BYTES, HEADER_BYTES};
use hinesim_core::metrics::voltage_digest;
use hinesim_core::{
    flop_budget, simulate, spike_invariance_check, Network, RankOutcome, RunConfig, RunOptions, RunReport, SizeModel,
    SpikeEvent, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(neurons: usize, seed: u64) -> RunConfig {
    RunConfig {
        neurons,
        synapses: 40,
        threshold: 0.85,
        size_model: SizeModel::Fixed(60),
        local_steps: 4,
        global_steps: 8,
        seed,
        ..RunConfig::default()
    }
}

fn run(cfg: &RunConfig) -> (Network, Vec<RankOutcome>) {
    let net = Arc::new(Network::build(cfg).unwrap());
    let outs = simulate(&net, &RunOptions::default()).unwrap();
    (Arc::try_unwrap(net).ok().unwrap(), outs)
}

fn spikes(outs: &[RankOutcome]) -> Vec<SpikeEvent> {
    let mut all: Vec<SpikeEvent> = outs.iter().flat_map(|o| o.spikes.iter().copied()).collect();
    all.sort_unstable();
    all
}

fn voltages(outs: &[RankOutcome]) -> Vec<(u32, Vec<u64>)> {
    let mut all: Vec<(u32, Vec<u64>)> =
        outs.iter().flat_map(|o| o.voltages.iter().map(|(g, v)| (*g, v.iter().map(|x| x.to_bits()).collect()))).collect();
    all.sort_by_key(|(g, _)| *g);
    all
}

/// Plain loop over steps and neurons, no engine, no transport. Spikes of
/// global step g-1 travel during step g and are applied after it.
fn sequential(net: &Network) -> (Vec<SpikeEvent>, Vec<(u32, Vec<u64>)>) {
    let cfg = &net.cfg;
    let mut neurons: Vec<_> = (0..cfg.neurons as u32).map(|g| net.build_neuron(g).unwrap()).collect();
    let mut in_flight: Vec<SpikeEvent> = Vec::new();
    let mut all = Vec::new();
    for g in 0..cfg.global_steps as u32 {
        let mut produced = Vec::new();
        for l in 0..cfg.local_steps as u16 {
            for n in neurons.iter_mut() {
                produced.extend(n.step(g, l).unwrap());
            }
        }
        for ev in &in_flight {
            let t = net.connectivity.targets_of(ev.source_gid as usize)[ev.synapse_slot as usize];
            neurons[t.gid as usize].deliver(t.slot as usize, cfg.weight).unwrap();
        }
        all.extend_from_slice(&produced);
        in_flight = produced;
    }
    all.sort_unstable();
    let v = neurons.iter().map(|n| (n.gid, n.v.iter().map(|x| x.to_bits()).collect())).collect();
    (all, v)
}

#[test]
fn single_worker_matches_sequential_loop() {
    for seed in [1, 2] {
        let (net, outs) = run(&small(120, seed));
        let (want_spikes, want_v) = sequential(&net);
        assert!(!want_spikes.is_empty(), "seed {seed} is silent");
        assert_eq!(spikes(&outs), want_spikes);
        assert_eq!(voltages(&outs), want_v);
    }
}

#[test]
fn results_independent_of_workers_ranks_and_strategy() {
    let base = RunConfig { size_model: SizeModel::Fisher { d1: 5.0, d2: 8.0, mean: 60.0, clamp: (10, 200) }, ..small(200, 3) };
    let (_, reference) = run(&base);
    let (want_s, want_v) = (spikes(&reference), voltages(&reference));
    let mut runs = vec![want_s.clone()];
    for (ranks, workers) in [(1, 2), (1, 8), (2, 1), (4, 2), (3, 3)] {
        for strategy in Strategy::ALL {
            let cfg = RunConfig { ranks, workers, strategy, ..base.clone() };
            let (_, outs) = run(&cfg);
            assert_eq!(spikes(&outs), want_s, "R={ranks} W={workers} {strategy:?}");
            assert_eq!(voltages(&outs), want_v, "R={ranks} W={workers} {strategy:?}");
            runs.push(spikes(&outs));
        }
    }
    assert!(spike_invariance_check(&runs));
}

#[test]
fn small_throttle_keeps_results() {
    let base = small(150, 4);
    let (_, a) = run(&base);
    let (_, b) = run(&RunConfig { throttle: 1, workers: 3, strategy: Strategy::Priority, ..base });
    assert_eq!(spikes(&a), spikes(&b));
}

#[test]
fn tracing_does_not_perturb_results() {
    let cfg = RunConfig { ranks: 2, workers: 2, ..small(150, 5) };
    let net = Arc::new(Network::build(&cfg).unwrap());
    let plain = simulate(&net, &RunOptions::default()).unwrap();
    let traced = simulate(&net, &RunOptions { tracing: true, record_order: true, t0: None }).unwrap();
    assert!(plain.iter().all(|o| o.trace.is_empty()));
    assert!(traced.iter().all(|o| !o.trace.is_empty()));
    assert_eq!(spikes(&plain), spikes(&traced));
    assert_eq!(voltages(&plain), voltages(&traced));
    let (a, b) = (RunReport::from_outcomes(&net, &plain), RunReport::from_outcomes(&net, &traced));
    assert_eq!(a.deterministic_text(), b.deterministic_text());
}

#[test]
fn flop_counter_equals_budget_for_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let models = [
        SizeModel::Fixed(450),
        SizeModel::Group20 { mean: 120.0, max_spread: 150 },
        SizeModel::Fisher { d1: 5.0, d2: 8.0, mean: 100.0, clamp: (10, 300) },
    ];
    for i in 0..9 {
        let neurons = rng.random_range(20..=100);
        let cfg = RunConfig {
            neurons,
            synapses: rng.random_range(0..neurons.min(60)),
            size_model: models[i % 3].clone(),
            local_steps: rng.random_range(1..=4),
            global_steps: rng.random_range(1..=4),
            ranks: rng.random_range(1..=3),
            workers: rng.random_range(1..=3),
            seed: rng.random(),
            strategy: Strategy::ALL[i % 4],
            ..RunConfig::default()
        };
        let (net, outs) = run(&cfg);
        let report = RunReport::from_outcomes(&net, &outs);
        assert_eq!(report.total_flops, flop_budget(&cfg, &net.sizes), "{cfg:?}");
        assert_eq!(report.total_flops, report.flop_budget);
    }
}

#[test]
fn default_flop_budget() {
    // M=450, S=500, D=G=10 at N=100: counted equals predicted.
    let cfg = RunConfig { neurons: 100, synapses: 99, fully_connected: true, ..RunConfig::default() };
    let (net, outs) = run(&cfg);
    let r = RunReport::from_outcomes(&net, &outs);
    assert_eq!(r.total_flops, 10 * 10 * 100 * (8 * 449 + 1 + 99));
    let big = RunConfig { neurons: 10_000, ..RunConfig::default() };
    assert_eq!(flop_budget(&big, &vec![450; 10_000]), 4_093_000_000);
}

#[test]
fn spike_counts_grow_with_population() {
    let totals: Vec<usize> = [50, 150, 400]
        .iter()
        .map(|&n| {
            let (_, outs) = run(&RunConfig { synapses: 40, ..small(n, 6) });
            spikes(&outs).len()
        })
        .collect();
    assert!(totals.windows(2).all(|w| w[0] <= w[1]), "{totals:?}");
}

#[test]
fn accounting_matches_the_wire() {
    let cfg = RunConfig { ranks: 3, ..small(150, 7) };
    let (net, outs) = run(&cfg);
    let report = RunReport::from_outcomes(&net, &outs);
    let all = spikes(&outs);
    let last = cfg.global_steps as u32 - 1;
    // Every spike but those of the final step travels exactly once.
    let travelled = all.iter().filter(|e| e.global_step < last).count() as u64;
    assert_eq!(report.exchanged_spikes, travelled);
    assert_eq!(report.total_spikes, all.len() as u64);
    // Own frame bytes: a header per rank per round plus 14 bytes per event.
    let headers = (cfg.ranks * cfg.global_steps * HEADER_BYTES) as u64;
    assert_eq!(report.frame_bytes, headers + EVENT_BYTES as u64 * travelled);
    assert_eq!(report.wire_bytes, report.frame_bytes * (cfg.ranks as u64 - 1));
    assert_eq!(report.bytes_exchanged(), report.frame_bytes * cfg.ranks as u64);
    // Per-neuron, per-step spike bound.
    for g in 0..cfg.global_steps as u32 {
        for gid in 0..cfg.neurons as u32 {
            let n = all.iter().filter(|e| e.global_step == g && e.source_gid == gid).count();
            assert!(n <= cfg.local_steps * cfg.synapses);
        }
    }
    assert_eq!(report.voltage_digest, outs.iter().fold(0, |a, o| a ^ voltage_digest(&o.voltages)));
}

#[test]
fn every_rank_sees_the_same_buffers() {
    let cfg = RunConfig { ranks: 4, workers: 2, ..small(160, 8) };
    let (_, outs) = run(&cfg);
    assert_eq!(outs[0].buffer_digests.len(), cfg.global_steps);
    assert!(outs.iter().all(|o| o.buffer_digests == outs[0].buffer_digests));
}

#[test]
fn same_seed_same_report() {
    let cfg = RunConfig { ranks: 2, workers: 2, ..small(100, 9) };
    let a = {
        let (net, outs) = run(&cfg);
        RunReport::from_outcomes(&net, &outs)
    };
    let b = {
        let (net, outs) = run(&cfg);
        RunReport::from_outcomes(&net, &outs)
    };
    assert_eq!(a.deterministic_text(), b.deterministic_text());
    let c = {
        let (net, outs) = run(&RunConfig { seed: 10, ..cfg });
        RunReport::from_outcomes(&net, &outs)
    };
    assert_ne!(a.spike_digest, c.spike_digest);
}

#[test]
fn silent_network_runs() {
    let (net, outs) = run(&RunConfig { synapses: 0, ranks: 2, ..small(20, 1) });
    let r = RunReport::from_outcomes(&net, &outs);
    assert_eq!(r.total_spikes, 0);
    assert_eq!(r.total_flops, r.flop_budget);
}

#[test]
fn spike_trend_over_population_decades() {
    // Defaults except S, which must fit the smallest population.
    let totals: Vec<u64> = [100, 1_000, 10_000]
        .iter()
        .map(|&neurons| {
            let (net, outs) = run(&RunConfig { neurons, synapses: 99, ..RunConfig::default() });
            RunReport::from_outcomes(&net, &outs).total_spikes
        })
        .collect();
    assert!(totals[0] > 0 && totals.windows(2).all(|w| w[0] <= w[1]), "{totals:?}");
}
