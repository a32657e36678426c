//! Config file loading and `--flag` overrides.

use std::path::Path;

use clap::Args;
use hinesim_core::network::{RunConfig, SizeModel, Strategy};
use hinesim_core::Error;
use serde_json::{Map, Value};

macro_rules! overrides {
    ($($field:ident : $ty:ty => $help:literal),* $(,)?) => {
        /// One optional flag per config key; set flags win over the file.
        #[derive(Args, Clone, Debug, Default)]
        pub struct Overrides {
            $(
                #[arg(long, help = $help)]
                pub $field: Option<$ty>,
            )*
        }

        impl Overrides {
            pub fn to_json(&self) -> Map<String, Value> {
                let mut m = Map::new();
                $(
                    if let Some(v) = &self.$field {
                        m.insert(stringify!($field).to_string(), serde_json::to_value(v).expect("flag value serializes"));
                    }
                )*
                m
            }
        }
    };
}

overrides! {
    neurons: usize => "Neuron count N",
    size_model: SizeModel => "fixed:M | group20:MEAN:SPREAD | fisher:D1:D2:MEAN:LO:HI",
    synapses: usize => "Synapses per neuron S",
    local_steps: usize => "Local steps per global step D",
    global_steps: usize => "Global steps G",
    ranks: usize => "Rank count R",
    workers: usize => "Workers per rank W",
    dt: f64 => "Time step",
    threshold: f64 => "Spike threshold",
    seed: u64 => "Seed for every random draw",
    strategy: Strategy => "unsorted | priority | global_sort | local_sort",
    throttle: usize => "Ready tasks admitted before the spawner runs one itself",
    fully_connected: bool => "Connect every neuron to every other (true/false)",
    branch_prob: f64 => "Per-compartment branching probability",
    f: f64 => "Cable coefficient f",
    g: f64 => "Cable coefficient g",
    cap: f64 => "Capacitance",
    dx: f64 => "Compartment length",
    g_leak: f64 => "Leak conductance",
    e_rest: f64 => "Leak reversal potential",
    v_init: f64 => "Initial voltage",
    v_init_spread: f64 => "Width of the seeded initial-voltage offset",
    weight: f64 => "Current injected per received spike",
    max_frame_bytes: usize => "Largest accepted spike frame",
}

/// Read `path` (a JSON object of config keys) if given, overlay `flags`,
/// and validate.
pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<RunConfig, Error> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(config_err(p, "expected a JSON object".into())),
                Err(e) => return Err(config_err(p, e.to_string())),
            }
        }
        None => Map::new(),
    };
    doc.extend(flags.to_json());
    let cfg: RunConfig = serde_json::from_value(Value::Object(doc)).map_err(|e| Error::Config {
        key: offending_key(&e.to_string()).unwrap_or_else(|| "config".into()),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_err(p: &Path, reason: String) -> Error {
    Error::Config { key: p.display().to_string(), reason }
}

/// serde names the culprit in backticks: "unknown field `nuerons`".
fn offending_key(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}
