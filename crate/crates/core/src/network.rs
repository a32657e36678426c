//! Population generation (sizes, connectivity) and placement across ranks.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, FisherF};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hines::CableParams;
use crate::morphology::Morphology;
use crate::neuron::{LeakModel, Neuron};
use crate::seed::{rng_for, Stream};

/// How compartment counts are drawn for the population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeModel {
    Fixed(usize),
    /// Twenty distinct sizes shared by the whole population.
    Group20 { mean: f64, max_spread: usize },
    /// F-distributed sizes rescaled to `mean` and clamped to `clamp`.
    Fisher { d1: f64, d2: f64, mean: f64, clamp: (usize, usize) },
}

impl fmt::Display for SizeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeModel::Fixed(m) => write!(f, "fixed:{m}"),
            SizeModel::Group20 { mean, max_spread } => write!(f, "group20:{mean}:{max_spread}"),
            SizeModel::Fisher { d1, d2, mean, clamp } => write!(f, "fisher:{d1}:{d2}:{mean}:{}:{}", clamp.0, clamp.1),
        }
    }
}

impl FromStr for SizeModel {
    type Err = String;
    /// `fixed:M`, `group20:MEAN:SPREAD` or `fisher:D1:D2:MEAN:LO:HI`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> std::result::Result<f64, String> {
            parts.get(i).ok_or_else(|| format!("`{s}`: missing field {i}"))?.parse::<f64>().map_err(|e| format!("`{s}`: {e}"))
        };
        let int = |i: usize| -> std::result::Result<usize, String> {
            parts.get(i).ok_or_else(|| format!("`{s}`: missing field {i}"))?.parse::<usize>().map_err(|e| format!("`{s}`: {e}"))
        };
        let (kind, arity) = (parts[0], parts.len());
        match (kind, arity) {
            ("fixed", 2) => Ok(SizeModel::Fixed(int(1)?)),
            ("group20", 3) => Ok(SizeModel::Group20 { mean: num(1)?, max_spread: int(2)? }),
            ("fisher", 6) => Ok(SizeModel::Fisher { d1: num(1)?, d2: num(2)?, mean: num(3)?, clamp: (int(4)?, int(5)?) }),
            _ => Err(format!("unrecognised size model `{s}` (fixed:M | group20:MEAN:SPREAD | fisher:D1:D2:MEAN:LO:HI)")),
        }
    }
}

/// Neuron placement strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Creation-order blocks, FIFO task dispatch.
    Unsorted,
    /// Creation-order blocks, size-prioritised task dispatch.
    Priority,
    /// One global descending-size sort split into blocks.
    GlobalSort,
    /// Size-descending round-robin deal, each rank stored large-first.
    LocalSort,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Unsorted, Strategy::Priority, Strategy::GlobalSort, Strategy::LocalSort];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Unsorted => "unsorted",
            Strategy::Priority => "priority",
            Strategy::GlobalSort => "global_sort",
            Strategy::LocalSort => "local_sort",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (unsorted | priority | global_sort | local_sort)"))
    }
}

fn d_fixed() -> SizeModel {
    SizeModel::Fixed(450)
}
fn d_neurons() -> usize {
    1000
}
fn d_synapses() -> usize {
    500
}
fn d_ten() -> usize {
    10
}
fn d_one() -> usize {
    1
}
fn d_unit() -> f64 {
    1.0
}
fn d_seed() -> u64 {
    1
}
fn d_throttle() -> usize {
    256
}
fn d_branch_prob() -> f64 {
    0.05
}
fn d_g_leak() -> f64 {
    0.1
}
fn d_v_init_spread() -> f64 {
    1.2
}
fn d_weight() -> f64 {
    2.0
}
fn d_max_frame() -> usize {
    64 << 20
}

/// Everything that defines a run. Field names double as config-file keys and,
/// in kebab-case, as command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_neurons")]
    pub neurons: usize,
    #[serde(default = "d_fixed")]
    pub size_model: SizeModel,
    #[serde(default = "d_synapses")]
    pub synapses: usize,
    /// Local steps per global step.
    #[serde(default = "d_ten")]
    pub local_steps: usize,
    #[serde(default = "d_ten")]
    pub global_steps: usize,
    #[serde(default = "d_one")]
    pub ranks: usize,
    #[serde(default = "d_one")]
    pub workers: usize,
    #[serde(default = "d_unit")]
    pub dt: f64,
    #[serde(default = "d_unit")]
    pub threshold: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Ready tasks admitted before the spawner must run one itself.
    #[serde(default = "d_throttle")]
    pub throttle: usize,
    /// Connect every neuron to every other one (S must be N - 1 or N).
    #[serde(default)]
    pub fully_connected: bool,
    #[serde(default = "d_branch_prob")]
    pub branch_prob: f64,
    #[serde(default = "d_unit")]
    pub f: f64,
    #[serde(default = "d_unit")]
    pub g: f64,
    #[serde(default = "d_unit")]
    pub cap: f64,
    #[serde(default = "d_unit")]
    pub dx: f64,
    #[serde(default = "d_g_leak")]
    pub g_leak: f64,
    #[serde(default)]
    pub e_rest: f64,
    /// Initial voltage of every compartment...
    #[serde(default)]
    pub v_init: f64,
    /// ...plus a seeded uniform offset in `[0, v_init_spread)` per compartment.
    #[serde(default = "d_v_init_spread")]
    pub v_init_spread: f64,
    /// Current injected by one received spike.
    #[serde(default = "d_weight")]
    pub weight: f64,
    #[serde(default = "d_max_frame")]
    pub max_frame_bytes: usize,
}

fn default_strategy() -> Strategy {
    Strategy::Unsorted
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config { key: key.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ranks < 1 {
            return Err(bad("ranks", "must be >= 1"));
        }
        if self.neurons < self.ranks {
            return Err(bad("neurons", format!("{} neurons cannot fill {} ranks", self.neurons, self.ranks)));
        }
        if self.local_steps < 1 || self.local_steps > u16::MAX as usize {
            return Err(bad("local_steps", "must be in [1, 65535]"));
        }
        if self.global_steps < 1 {
            return Err(bad("global_steps", "must be >= 1"));
        }
        if self.workers < 1 {
            return Err(bad("workers", "must be >= 1"));
        }
        if self.throttle < 1 {
            return Err(bad("throttle", "must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(bad("dt", "must be > 0"));
        }
        if !(self.dx > 0.0) {
            return Err(bad("dx", "must be > 0"));
        }
        if !(self.cap > 0.0) {
            return Err(bad("cap", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return Err(bad("branch_prob", "must be in [0, 1]"));
        }
        if self.v_init_spread < 0.0 {
            return Err(bad("v_init_spread", "must be >= 0"));
        }
        if self.fully_connected {
            if self.synapses + 1 != self.neurons && self.synapses != self.neurons {
                return Err(bad("synapses", "fully_connected needs synapses = neurons - 1 or neurons"));
            }
        } else if self.synapses > self.neurons - 1 {
            return Err(bad("synapses", format!("{} distinct targets requested, {} available", self.synapses, self.neurons - 1)));
        }
        if self.neurons > u32::MAX as usize {
            return Err(bad("neurons", "exceeds u32 range"));
        }
        match &self.size_model {
            SizeModel::Fixed(0) => return Err(bad("size_model", "size must be >= 1")),
            SizeModel::Fisher { d1, d2, mean, clamp } => {
                if !(*d1 > 0.0 && *d2 > 0.0) {
                    return Err(bad("size_model", "fisher degrees of freedom must be > 0"));
                }
                if !(*mean >= 1.0) {
                    return Err(bad("size_model", "fisher mean must be >= 1"));
                }
                if clamp.0 < 1 || clamp.0 > clamp.1 {
                    return Err(bad("size_model", "fisher clamp must satisfy 1 <= lo <= hi"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Task priorities are honoured only by the priority strategy.
    pub fn priority_mode(&self) -> bool {
        self.strategy == Strategy::Priority
    }
}

/// Per-local-step work model of one neuron: solve flops plus threshold checks.
pub fn neuron_cost(size: usize, synapses: usize) -> u64 {
    crate::hines::solve_flops(size) + synapses as u64
}

/// Draw the compartment count of every neuron.
pub fn draw_sizes(cfg: &RunConfig) -> Result<Vec<usize>> {
    let n = cfg.neurons;
    let mut rng = rng_for(cfg.seed, Stream::Sizes, 0);
    match cfg.size_model {
        SizeModel::Fixed(m) => {
            if m == 0 {
                return Err(Error::InfeasibleSizes("fixed size must be >= 1".into()));
            }
            Ok(vec![m; n])
        }
        SizeModel::Group20 { mean, max_spread } => {
            let group = draw_group20(mean, max_spread, &mut rng)?;
            Ok((0..n).map(|_| group[rng.random_range(0..group.len())]).collect())
        }
        SizeModel::Fisher { d1, d2, mean, clamp } => {
            let dist = FisherF::new(d1, d2).map_err(|e| Error::InfeasibleSizes(format!("F({d1}, {d2}): {e}")))?;
            let raw: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let avg = raw.iter().sum::<f64>() / n as f64;
            if !(avg > 0.0) {
                return Err(Error::InfeasibleSizes("F draws have zero mean".into()));
            }
            let scale = mean / avg;
            let (lo, hi) = clamp;
            Ok(raw.iter().map(|x| ((x * scale).round() as usize).clamp(lo.max(1), hi)).collect())
        }
    }
}

const GROUP: usize = 20;

fn draw_group20<R: Rng>(mean: f64, max_spread: usize, rng: &mut R) -> Result<Vec<usize>> {
    if max_spread < GROUP - 1 {
        return Err(Error::InfeasibleSizes(format!("20 distinct sizes need a spread of at least 19, got {max_spread}")));
    }
    if !(mean >= 1.0 + (GROUP as f64 - 1.0) / 2.0) {
        return Err(Error::InfeasibleSizes(format!("mean {mean} too small for 20 distinct positive sizes")));
    }
    // Centre a window on the mean, as wide as the spread and positivity allow.
    let half = (max_spread as f64 / 2.0).min(mean - 1.0).floor() as usize;
    let centre = mean.round() as usize;
    let (lo, hi) = (centre - half, centre + half);
    for _ in 0..10_000 {
        let mut g: Vec<usize> = sample(rng, hi - lo + 1, GROUP).into_iter().map(|k| lo + k).collect();
        g.sort_unstable();
        let avg = g.iter().sum::<usize>() as f64 / GROUP as f64;
        let shift = (mean - avg).round() as i64;
        let min_shift = 1 - g[0] as i64;
        let shift = shift.max(min_shift);
        let shifted: Vec<usize> = g.iter().map(|&x| (x as i64 + shift) as usize).collect();
        let avg = shifted.iter().sum::<usize>() as f64 / GROUP as f64;
        if (avg - mean).abs() <= 0.05 * mean && shifted[GROUP - 1] - shifted[0] <= max_spread {
            return Ok(shifted);
        }
    }
    Err(Error::InfeasibleSizes(format!("no 20-size group with mean {mean} and spread <= {max_spread} found")))
}

/// Outgoing synapse endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Target {
    pub gid: u32,
    pub slot: u32,
}

/// Outgoing targets of every neuron, `synapses` per neuron, flat.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connectivity {
    pub synapses: usize,
    targets: Vec<Target>,
}

impl Connectivity {
    pub fn targets_of(&self, gid: usize) -> &[Target] {
        &self.targets[gid * self.synapses..(gid + 1) * self.synapses]
    }

    pub fn neurons(&self) -> usize {
        self.targets.len().checked_div(self.synapses).unwrap_or(0)
    }
}

/// Draw every neuron's outgoing targets (no self-connections).
pub fn build_connectivity(cfg: &RunConfig) -> Result<Connectivity> {
    let (n, s) = (cfg.neurons, cfg.synapses);
    let available = n.saturating_sub(1);
    if cfg.fully_connected {
        if s != available && s != n {
            return Err(Error::Connectivity { requested: s, available });
        }
    } else if s > available {
        return Err(Error::Connectivity { requested: s, available });
    }
    let mut targets = Vec::with_capacity(n * s);
    for gid in 0..n {
        let mut rng = rng_for(cfg.seed, Stream::Targets, gid as u64);
        let others = |k: usize| if k >= gid { k + 1 } else { k };
        let picks: Vec<usize> = if cfg.fully_connected {
            let mut all: Vec<usize> = (0..available).map(others).collect();
            if s > available && available > 0 {
                // One repeated target fills the slot a self-connection would take.
                all.push(others(rng.random_range(0..available)));
            }
            all
        } else {
            sample(&mut rng, available, s).into_iter().map(others).collect()
        };
        for t in picks {
            let slot = if s == 0 { 0 } else { rng.random_range(0..s) as u32 };
            targets.push(Target { gid: t as u32, slot });
        }
    }
    Ok(Connectivity { synapses: s, targets })
}

/// Neuron-to-rank assignment plus per-rank storage order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    /// Per rank, gids in storage (and task creation) order.
    pub assignment: Vec<Vec<u32>>,
    /// Per-neuron, per-local-step cost estimate.
    pub costs: Vec<u64>,
    /// `(rank, position in that rank's list)` for every gid.
    pub owner: Vec<(u32, u32)>,
}

impl Partition {
    pub fn ranks(&self) -> usize {
        self.assignment.len()
    }

    pub fn rank_costs(&self) -> Vec<u64> {
        self.assignment.iter().map(|l| l.iter().map(|&g| self.costs[g as usize]).sum()).collect()
    }
}

fn blocks(order: &[u32], ranks: usize) -> Vec<Vec<u32>> {
    let (n, base, extra) = (order.len(), order.len() / ranks, order.len() % ranks);
    let mut out = Vec::with_capacity(ranks);
    let mut at = 0;
    for r in 0..ranks {
        let len = base + usize::from(r < extra);
        out.push(order[at..at + len].to_vec());
        at += len;
    }
    debug_assert_eq!(at, n);
    out
}

/// Place neurons on `cfg.ranks` ranks according to `cfg.strategy`.
pub fn partition(cfg: &RunConfig, sizes: &[usize]) -> Partition {
    let ranks = cfg.ranks;
    let costs: Vec<u64> = sizes.iter().map(|&m| neuron_cost(m, cfg.synapses)).collect();
    let creation: Vec<u32> = (0..sizes.len() as u32).collect();
    let mut by_size = creation.clone();
    // Stable: equal sizes keep gid order.
    by_size.sort_by(|&x, &y| sizes[y as usize].cmp(&sizes[x as usize]));
    let assignment = match cfg.strategy {
        Strategy::Unsorted | Strategy::Priority => blocks(&creation, ranks),
        Strategy::GlobalSort => blocks(&by_size, ranks),
        Strategy::LocalSort => {
            let mut dealt = vec![Vec::new(); ranks];
            for (k, &g) in by_size.iter().enumerate() {
                dealt[k % ranks].push(g);
            }
            // Dealing in descending order leaves every list already large-first.
            dealt
        }
    };
    let mut owner = vec![(0, 0); sizes.len()];
    for (r, list) in assignment.iter().enumerate() {
        for (k, &g) in list.iter().enumerate() {
            owner[g as usize] = (r as u32, k as u32);
        }
    }
    Partition { assignment, costs, owner }
}

/// `(max - mean) / mean` over per-rank total costs.
pub fn imbalance(part: &Partition) -> f64 {
    imbalance_of(&part.rank_costs())
}

pub fn imbalance_of(rank_costs: &[u64]) -> f64 {
    if rank_costs.is_empty() {
        return 0.0;
    }
    let mean = rank_costs.iter().sum::<u64>() as f64 / rank_costs.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let max = *rank_costs.iter().max().unwrap() as f64;
    (max - mean) / mean
}

/// A generated population: sizes, connectivity and placement.
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: RunConfig,
    pub sizes: Vec<usize>,
    pub connectivity: Connectivity,
    pub partition: Partition,
}

impl Network {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sizes = draw_sizes(cfg)?;
        let connectivity = build_connectivity(cfg)?;
        let partition = partition(cfg, &sizes);
        Ok(Self { cfg: cfg.clone(), sizes, connectivity, partition })
    }

    /// Instantiate neuron `gid` with its seeded morphology, synapse sites and
    /// initial voltage.
    pub fn build_neuron(&self, gid: u32) -> Result<Neuron> {
        let cfg = &self.cfg;
        let m = self.sizes[gid as usize];
        let morph = Morphology::random(m, cfg.branch_prob, &mut rng_for(cfg.seed, Stream::Morphology, gid as u64))?;
        let params = CableParams::uniform(m, cfg.f, cfg.g, cfg.cap, cfg.dx, cfg.dt);
        let mut rng = rng_for(cfg.seed, Stream::Synapses, gid as u64);
        let sites = (0..cfg.synapses).map(|_| rng.random_range(0..m) as u32).collect();
        let mut rng = rng_for(cfg.seed, Stream::InitialVoltage, gid as u64);
        let v = (0..m)
            .map(|_| if cfg.v_init_spread > 0.0 { cfg.v_init + rng.random_range(0.0..cfg.v_init_spread) } else { cfg.v_init })
            .collect();
        let leak = LeakModel { g_leak: cfg.g_leak, e_rest: cfg.e_rest };
        Neuron::new(gid, morph, params, sites, cfg.threshold, leak, v)
    }
}
