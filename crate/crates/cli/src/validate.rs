//! Oracle suites: Hines vs dense elimination, chains vs Thomas, and
//! in-process vs TCP transport.

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use clap::Args;
use hinesim_core::exchange::{connect_mesh_on, MeshOptions};
use hinesim_core::hines::oracle::{chain_bands, dense_solve, random_system, thomas};
use hinesim_core::seed::{rng_for, Stream};
use hinesim_core::{run_rank, simulate, Network, RankOutcome, RunConfig, RunOptions, RunReport};
use rand::Rng;

use crate::{CmdResult, Failure};

pub const TOLERANCE: f64 = 1e-10;

#[derive(Args, Clone, Debug)]
pub struct ValidateArgs {
    /// Random systems in the dense-oracle suite.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    /// Chains in the Thomas suite.
    #[arg(long, default_value_t = 50)]
    pub chains: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
    /// Largest relative error seen (solver suites only).
    pub max_error: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative infinity-norm error of `x` against `want`.
pub fn rel_err(x: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    x.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

fn solver_suite(name: &'static str, cases: usize, seed: u64, chain: bool) -> SuiteResult {
    let mut res = SuiteResult { name, cases, failures: Vec::new(), max_error: 0.0 };
    for case in 0..cases {
        let mut rng = rng_for(seed, Stream::Validation, case as u64);
        let n = rng.random_range(if chain { 1..=800 } else { 10..=800 });
        let bp = if chain { 0.0 } else { rng.random_range(0.01..0.3) };
        let outcome = random_system(n, bp, &mut rng).and_then(|sys| {
            let want = if chain {
                let (sub, diag, sup, rhs) = chain_bands(&sys);
                thomas(&sub, &diag, &sup, &rhs)?
            } else {
                dense_solve(&sys)?
            };
            let mut sys = sys;
            sys.solve()?;
            Ok(rel_err(sys.solution(), &want))
        });
        match outcome {
            Ok(e) if e <= TOLERANCE => res.max_error = res.max_error.max(e),
            Ok(e) => {
                res.max_error = res.max_error.max(e);
                res.failures.push(format!("case {case} (n={n}): error {e:.3e}"));
            }
            Err(e) => res.failures.push(format!("case {case} (n={n}): {e}")),
        }
    }
    res
}

pub fn hines_vs_dense(cases: usize, seed: u64) -> SuiteResult {
    solver_suite("hines_vs_dense", cases, seed, false)
}

pub fn chain_vs_thomas(cases: usize, seed: u64) -> SuiteResult {
    solver_suite("chain_vs_thomas", cases, seed, true)
}

/// All ranks of `net` in this process, each over a loopback TCP mesh.
pub fn simulate_tcp(net: &Arc<Network>, opts: &RunOptions) -> hinesim_core::Result<Vec<RankOutcome>> {
    let ranks = net.cfg.ranks;
    let listeners = (0..ranks).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<std::io::Result<Vec<_>>>()?;
    let addrs = listeners.iter().map(|l| Ok(l.local_addr()?.to_string())).collect::<std::io::Result<Vec<String>>>()?;
    thread::scope(|s| {
        let hs: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(rank, l)| {
                let (net, addrs) = (net.clone(), &addrs);
                s.spawn(move || {
                    let t = connect_mesh_on(l, addrs, rank, &MeshOptions::default())?;
                    run_rank(net, t, opts)
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    })
}

pub fn transport_equivalence(seed: u64) -> SuiteResult {
    let configs = [(2, 1), (3, 2), (4, 1)];
    let mut res = SuiteResult { name: "inproc_vs_tcp", cases: configs.len(), failures: Vec::new(), max_error: 0.0 };
    for (ranks, workers) in configs {
        let cfg = RunConfig {
            neurons: 60,
            synapses: 20,
            size_model: hinesim_core::SizeModel::Fixed(40),
            global_steps: 5,
            local_steps: 3,
            ranks,
            workers,
            seed,
            ..RunConfig::default()
        };
        let outcome = Network::build(&cfg).map(Arc::new).and_then(|net| {
            let a = RunReport::from_outcomes(&net, &simulate(&net, &RunOptions::default())?);
            let b = RunReport::from_outcomes(&net, &simulate_tcp(&net, &RunOptions::default())?);
            Ok(a.deterministic_text() == b.deterministic_text())
        });
        match outcome {
            Ok(true) => {}
            Ok(false) => res.failures.push(format!("R={ranks} W={workers}: reports differ")),
            Err(e) => res.failures.push(format!("R={ranks} W={workers}: {e}")),
        }
    }
    res
}

pub fn run_suites(args: &ValidateArgs) -> Vec<SuiteResult> {
    vec![hines_vs_dense(args.cases, args.seed), chain_vs_thomas(args.chains, args.seed), transport_equivalence(args.seed)]
}

pub fn validate(args: &ValidateArgs) -> CmdResult {
    let results = run_suites(args);
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {} cases={} failures={} max_rel_err={:.3e}", r.name, r.cases, r.failures.len(), r.max_error);
        for f in &r.failures {
            println!("  {f}");
        }
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure::validation(format!("{failed} of {} suites failed", results.len())));
    }
    Ok(())
}
