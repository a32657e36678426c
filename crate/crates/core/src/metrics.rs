//! Run accounting: flop budget, digests and the flat `key=value` report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{imbalance, neuron_cost, Network, RunConfig};
use crate::neuron::SpikeEvent;
use crate::runtime::{count_inversions, RankOutcome};
use crate::trace::{summarize, Label};

/// Predicted flops: `G * D * sum_i (8 (M_i - 1) + 1 + S)`.
pub fn flop_budget(cfg: &RunConfig, sizes: &[usize]) -> u64 {
    let per_step: u64 = sizes.iter().map(|&m| neuron_cost(m, cfg.synapses)).sum();
    cfg.global_steps as u64 * cfg.local_steps as u64 * per_step
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-independent digest of a spike multiset (wrapping sum of per-event
/// hashes, so per-rank digests add up to the whole-run digest).
pub fn spike_digest<'a>(events: impl IntoIterator<Item = &'a SpikeEvent>) -> u64 {
    events.into_iter().fold(0u64, |acc, e| {
        let h = mix(mix(mix((e.source_gid as u64) << 32 | e.synapse_slot as u64) ^ (e.global_step as u64) << 16 | e.local_step as u64));
        acc.wrapping_add(h)
    })
}

/// XOR over neurons of a hash of `(gid, voltage bits)`.
pub fn voltage_digest<'a>(voltages: impl IntoIterator<Item = &'a (u32, Vec<f64>)>) -> u64 {
    voltages.into_iter().fold(0u64, |acc, (gid, v)| {
        let mut h = Sha256::new();
        h.update(gid.to_le_bytes());
        for x in v {
            h.update(x.to_bits().to_le_bytes());
        }
        acc ^ u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    })
}

/// Measurements that depend on the machine and schedule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timing {
    pub wall_time_s: f64,
    pub comm_fraction: Option<f64>,
    pub idle_fraction: Option<f64>,
    pub busy_s: BTreeMap<u32, f64>,
    pub overlap_achieved: Option<bool>,
    /// Start-order inversions of compute tasks, summed over local steps.
    pub inversions: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    /// Ranks whose results this report covers.
    pub ranks_reported: Vec<u32>,
    pub total_spikes: u64,
    /// Events carried by global buffers, counted once per round.
    pub exchanged_spikes: u64,
    pub total_flops: u64,
    pub flop_budget: u64,
    /// Own frames summed over ranks and rounds.
    pub frame_bytes: u64,
    /// Bytes put on the wire (each frame once per peer).
    pub wire_bytes: u64,
    pub imbalance: f64,
    pub spike_digest: u64,
    pub voltage_digest: u64,
    pub buffer_digests: Vec<String>,
    pub timing: Timing,
}

/// Inversions within each local step's start order.
pub fn start_inversions(out: &RankOutcome) -> u64 {
    let mut by_step: BTreeMap<(u32, u16), Vec<u64>> = BTreeMap::new();
    for r in &out.start_order {
        if let Label::Neuron { g, l, .. } = r.label {
            by_step.entry((g, l)).or_default().push(r.priority);
        }
    }
    by_step.values().map(|p| count_inversions(p)).sum()
}

impl RunReport {
    /// Report over the given ranks of one run.
    pub fn from_outcomes(net: &Network, outs: &[RankOutcome]) -> Self {
        let cfg = &net.cfg;
        let trace: Vec<_> = outs.iter().flat_map(|o| o.trace.iter().copied()).collect();
        let traced = !trace.is_empty();
        let summary = summarize(&trace);
        let recorded = outs.iter().any(|o| !o.start_order.is_empty());
        let timing = Timing {
            wall_time_s: outs.iter().map(|o| o.wall_time.as_secs_f64()).fold(0.0, f64::max),
            comm_fraction: traced.then_some(summary.comm_fraction),
            idle_fraction: traced.then_some(summary.idle_fraction),
            busy_s: summary.per_rank_busy_ns.iter().map(|(r, ns)| (*r, *ns as f64 * 1e-9)).collect(),
            overlap_achieved: traced.then_some(summary.overlap_achieved),
            inversions: recorded.then(|| outs.iter().map(start_inversions).sum()),
        };
        Self {
            config: cfg.clone(),
            ranks_reported: outs.iter().map(|o| o.rank).collect(),
            total_spikes: outs.iter().map(|o| o.spikes.len() as u64).sum(),
            exchanged_spikes: outs.first().map_or(0, |o| o.exchanged_spikes),
            total_flops: outs.iter().map(|o| o.flops).sum(),
            flop_budget: flop_budget(cfg, &net.sizes),
            frame_bytes: outs.iter().map(|o| o.frame_bytes).sum(),
            wire_bytes: outs.iter().map(|o| o.wire_bytes).sum(),
            imbalance: imbalance(&net.partition),
            spike_digest: outs.iter().fold(0u64, |a, o| a.wrapping_add(spike_digest(&o.spikes))),
            voltage_digest: outs.iter().fold(0u64, |a, o| a ^ voltage_digest(&o.voltages)),
            buffer_digests: outs.first().map(|o| o.buffer_digests.clone()).unwrap_or_default(),
            timing,
        }
    }

    /// Combine per-rank reports of one run (e.g. one per process).
    pub fn merge(reports: &[RunReport]) -> Result<Self> {
        let first = reports.first().ok_or_else(|| Error::InvalidParam("no reports to merge".into()))?;
        let mut out = first.clone();
        for r in &reports[1..] {
            if r.config != first.config {
                return Err(Error::InvalidParam("reports come from different configurations".into()));
            }
            if r.buffer_digests != first.buffer_digests {
                return Err(Error::InvalidParam(format!("ranks {:?} saw different global buffers", r.ranks_reported)));
            }
            if r.exchanged_spikes != first.exchanged_spikes {
                return Err(Error::InvalidParam("ranks disagree on exchanged spike count".into()));
            }
            out.ranks_reported.extend(&r.ranks_reported);
            out.total_spikes += r.total_spikes;
            out.total_flops += r.total_flops;
            out.frame_bytes += r.frame_bytes;
            out.wire_bytes += r.wire_bytes;
            out.spike_digest = out.spike_digest.wrapping_add(r.spike_digest);
            out.voltage_digest ^= r.voltage_digest;
            let t = &mut out.timing;
            t.wall_time_s = t.wall_time_s.max(r.timing.wall_time_s);
            t.busy_s.extend(r.timing.busy_s.iter().map(|(k, v)| (*k, *v)));
            t.overlap_achieved = match (t.overlap_achieved, r.timing.overlap_achieved) {
                (Some(a), Some(b)) => Some(a && b),
                (a, b) => a.or(b),
            };
            t.inversions = match (t.inversions, r.timing.inversions) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.or(b),
            };
            // Fractions are not additive without the raw trace; drop them.
            t.comm_fraction = None;
            t.idle_fraction = None;
        }
        let mut seen = out.ranks_reported.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != out.ranks_reported.len() {
            return Err(Error::InvalidParam("a rank appears in two reports".into()));
        }
        out.ranks_reported = seen;
        Ok(out)
    }

    /// `bytes_exchanged`: every frame lands in all R global buffers.
    pub fn bytes_exchanged(&self) -> u64 {
        self.frame_bytes * self.config.ranks as u64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        let ranks: Vec<String> = self.ranks_reported.iter().map(u32::to_string).collect();
        kv("ranks_reported", &ranks.join(","));
        kv("total_spikes", &self.total_spikes);
        kv("exchanged_spikes", &self.exchanged_spikes);
        kv("total_flops", &self.total_flops);
        kv("flop_budget", &self.flop_budget);
        kv("frame_bytes", &self.frame_bytes);
        kv("wire_bytes", &self.wire_bytes);
        kv("bytes_exchanged", &self.bytes_exchanged());
        kv("imbalance", &self.imbalance);
        kv("spike_digest", &format!("{:016x}", self.spike_digest));
        kv("voltage_digest", &format!("{:016x}", self.voltage_digest));
        for (g, d) in self.buffer_digests.iter().enumerate() {
            kv(&format!("buffer_digest.g{g}"), d);
        }
        if let serde_json::Value::Object(m) = serde_json::to_value(&self.config).expect("config serializes") {
            for (k, v) in m {
                kv(&format!("config.{k}"), &v);
            }
        }
        let t = &self.timing;
        kv("timing.wall_time_s", &t.wall_time_s);
        if let Some(x) = t.comm_fraction {
            kv("timing.comm_fraction", &x);
        }
        if let Some(x) = t.idle_fraction {
            kv("timing.idle_fraction", &x);
        }
        for (r, b) in &t.busy_s {
            kv(&format!("timing.busy_s.r{r}"), b);
        }
        if let Some(x) = t.overlap_achieved {
            kv("timing.overlap_achieved", &x);
        }
        if let Some(x) = t.inversions {
            kv("timing.inversions", &x);
        }
        s
    }

    /// The report with all `timing.` lines removed: identical for identical
    /// seeds and configurations.
    pub fn deterministic_text(&self) -> String {
        self.to_text().lines().filter(|l| !l.starts_with("timing.")).map(|l| format!("{l}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |k: &str, why: String| Error::Config { key: k.to_string(), reason: why };
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line, "expected key=value".into()))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(k, "missing".into()));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| Error::Config { key: k.to_string(), reason: e.to_string() })
        }
        let hex = |k: &str| -> Result<u64> { u64::from_str_radix(get(k)?, 16).map_err(|e| bad(k, e.to_string())) };
        let mut config = serde_json::Map::new();
        let mut digests = BTreeMap::new();
        let mut timing = Timing::default();
        for (k, v) in &kv {
            if let Some(field) = k.strip_prefix("config.") {
                config.insert(field.to_string(), serde_json::from_str(v).map_err(|e| bad(k, e.to_string()))?);
            } else if let Some(g) = k.strip_prefix("buffer_digest.g") {
                digests.insert(num::<usize>(k, g)?, v.to_string());
            } else if let Some(r) = k.strip_prefix("timing.busy_s.r") {
                timing.busy_s.insert(num(k, r)?, num(k, v)?);
            }
        }
        timing.wall_time_s = num("timing.wall_time_s", get("timing.wall_time_s")?)?;
        let opt = |k: &str| kv.get(k).copied();
        timing.comm_fraction = opt("timing.comm_fraction").map(|v| num("timing.comm_fraction", v)).transpose()?;
        timing.idle_fraction = opt("timing.idle_fraction").map(|v| num("timing.idle_fraction", v)).transpose()?;
        timing.overlap_achieved = opt("timing.overlap_achieved").map(|v| num("timing.overlap_achieved", v)).transpose()?;
        timing.inversions = opt("timing.inversions").map(|v| num("timing.inversions", v)).transpose()?;
        let ranks = get("ranks_reported")?;
        let ranks_reported = if ranks.is_empty() {
            Vec::new()
        } else {
            ranks.split(',').map(|r| num("ranks_reported", r)).collect::<Result<_>>()?
        };
        Ok(Self {
            config: serde_json::from_value(serde_json::Value::Object(config)).map_err(|e| bad("config", e.to_string()))?,
            ranks_reported,
            total_spikes: num("total_spikes", get("total_spikes")?)?,
            exchanged_spikes: num("exchanged_spikes", get("exchanged_spikes")?)?,
            total_flops: num("total_flops", get("total_flops")?)?,
            flop_budget: num("flop_budget", get("flop_budget")?)?,
            frame_bytes: num("frame_bytes", get("frame_bytes")?)?,
            wire_bytes: num("wire_bytes", get("wire_bytes")?)?,
            imbalance: num("imbalance", get("imbalance")?)?,
            spike_digest: hex("spike_digest")?,
            voltage_digest: hex("voltage_digest")?,
            buffer_digests: digests.into_values().collect(),
            timing,
        })
    }
}

/// True iff every run produced the same spike multiset (and total).
pub fn spike_invariance_check(runs: &[Vec<SpikeEvent>]) -> bool {
    let canon = |v: &Vec<SpikeEvent>| {
        let mut v = v.clone();
        v.sort_unstable();
        v
    };
    match runs.split_first() {
        None => true,
        Some((first, rest)) => {
            let f = canon(first);
            rest.iter().all(|r| canon(r) == f)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::SizeModel;

    #[test]
    fn budget_examples() {
        let c = RunConfig { neurons: 1, global_steps: 1, local_steps: 1, synapses: 0, size_model: SizeModel::Fixed(2), ..RunConfig::default() };
        assert_eq!(flop_budget(&c, &[2]), 9);
        let c = RunConfig { neurons: 10_000, ..RunConfig::default() };
        let b = flop_budget(&c, &vec![450; 10_000]);
        assert_eq!(b, 10 * 10 * 10_000 * (8 * 449 + 1 + 500));
        assert_eq!(b, 4_093_000_000);
    }

    #[test]
    fn spike_digest_is_order_free_and_additive() {
        let e = |g, s, l| SpikeEvent { source_gid: g, synapse_slot: s, local_step: l, global_step: 0 };
        let a = [e(1, 2, 3), e(4, 5, 6), e(1, 2, 3)];
        let b = [e(4, 5, 6), e(1, 2, 3), e(1, 2, 3)];
        assert_eq!(spike_digest(&a), spike_digest(&b));
        assert_eq!(spike_digest(&a), spike_digest(&a[..1]).wrapping_add(spike_digest(&a[1..])));
        assert_ne!(spike_digest(&a[..2]), spike_digest(&a));
        assert!(spike_invariance_check(&[a.to_vec(), b.to_vec()]));
        assert!(!spike_invariance_check(&[a.to_vec(), b[..2].to_vec()]));
    }

    #[test]
    fn voltage_digest_sees_single_bits() {
        let a = vec![(0, vec![0.5, 1.0]), (1, vec![2.0])];
        let mut b = a.clone();
        b[1].1[0] = f64::from_bits(2.0f64.to_bits() + 1);
        assert_ne!(voltage_digest(&a), voltage_digest(&b));
        let rev: Vec<_> = a.iter().rev().cloned().collect();
        assert_eq!(voltage_digest(&a), voltage_digest(&rev));
    }

    fn sample() -> RunReport {
        RunReport {
            config: RunConfig::default(),
            ranks_reported: vec![0, 1],
            total_spikes: 12,
            exchanged_spikes: 10,
            total_flops: 99,
            flop_budget: 99,
            frame_bytes: 64,
            wire_bytes: 64,
            imbalance: 0.25,
            spike_digest: 0xdead_beef,
            voltage_digest: u64::MAX,
            buffer_digests: vec!["ab".into(), "cd".into()],
            timing: Timing {
                wall_time_s: 1.5,
                comm_fraction: Some(0.01),
                idle_fraction: None,
                busy_s: [(0, 1.0), (1, 2.0)].into_iter().collect(),
                overlap_achieved: Some(true),
                inversions: Some(3),
            },
        }
    }

    #[test]
    fn text_round_trip() {
        let r = sample();
        let text = r.to_text();
        assert!(text.contains("total_flops=99\n"));
        assert!(text.contains("config.synapses=500\n"));
        assert!(text.contains("config.size_model={\"fixed\":450}\n"));
        assert_eq!(RunReport::parse(&text).unwrap(), r);
        assert!(!r.deterministic_text().contains("timing."));
    }

    #[test]
    fn merge_sums_and_checks() {
        let mut a = sample();
        a.ranks_reported = vec![0];
        let mut b = sample();
        b.ranks_reported = vec![1];
        let m = RunReport::merge(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.total_spikes, 24);
        assert_eq!(m.voltage_digest, 0);
        assert_eq!(m.ranks_reported, vec![0, 1]);
        b.buffer_digests[0] = "zz".into();
        assert!(RunReport::merge(&[a.clone(), b]).is_err());
        assert!(RunReport::merge(&[a.clone(), a]).is_err());
    }
}
