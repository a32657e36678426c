//! A single simulated neuron: voltage over its morphology, the local step, and
//! threshold detection at synapse sites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hines::{CableParams, HinesSystem};
use crate::morphology::Morphology;

/// One threshold crossing at a synapse site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub source_gid: u32,
    pub synapse_slot: u32,
    pub local_step: u16,
    pub global_step: u32,
}

impl SpikeEvent {
    /// Canonical ordering key used to seal buffers.
    pub fn key(&self) -> (u32, u32, u32, u16) {
        (self.global_step, self.source_gid, self.synapse_slot, self.local_step)
    }
}

/// Linear leak toward a rest potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakModel {
    pub g_leak: f64,
    pub e_rest: f64,
}

impl Default for LeakModel {
    fn default() -> Self {
        Self { g_leak: 0.1, e_rest: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Neuron {
    pub gid: u32,
    pub morph: Morphology,
    pub sys: HinesSystem,
    pub params: CableParams,
    pub v: Vec<f64>,
    /// Compartment index of each synapse slot.
    pub synapse_sites: Vec<u32>,
    pub threshold: f64,
    pub leak: LeakModel,
    pub pending_current: Vec<f64>,
    current: Vec<f64>,
    /// Floating-point operations spent in solves so far.
    pub solve_flops: u64,
    /// Threshold comparisons performed so far.
    pub comparisons: u64,
}

impl Neuron {
    pub fn new(
        gid: u32,
        morph: Morphology,
        params: CableParams,
        synapse_sites: Vec<u32>,
        threshold: f64,
        leak: LeakModel,
        v: Vec<f64>,
    ) -> Result<Self> {
        let n = morph.len();
        if v.len() != n {
            return Err(Error::Dimension { what: "V", got: v.len(), expected: n });
        }
        if let Some(&s) = synapse_sites.iter().find(|&&s| s as usize >= n) {
            return Err(Error::InvalidParam(format!("synapse site {s} outside a {n}-compartment neuron")));
        }
        let sys = HinesSystem::assemble(&morph, &params)?;
        Ok(Self {
            gid,
            morph,
            sys,
            params,
            v,
            synapse_sites,
            threshold,
            leak,
            pending_current: vec![0.0; n],
            current: vec![0.0; n],
            solve_flops: 0,
            comparisons: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.morph.len()
    }

    pub fn synapses(&self) -> usize {
        self.synapse_sites.len()
    }

    /// Advance one local step and report the synapse slots above threshold.
    pub fn step(&mut self, global_step: u32, local_step: u16) -> Result<Vec<SpikeEvent>> {
        let LeakModel { g_leak, e_rest } = self.leak;
        for ((c, &v), p) in self.current.iter_mut().zip(&self.v).zip(&self.pending_current) {
            *c = g_leak * (v - e_rest) - p;
        }
        self.sys.update_step(&self.params, &self.v, &self.current)?;
        let stats = self.sys.solve()?;
        self.solve_flops += stats.flops;
        self.v.copy_from_slice(self.sys.solution());
        self.pending_current.fill(0.0);
        Ok(self.detect(global_step, local_step))
    }

    fn detect(&mut self, global_step: u32, local_step: u16) -> Vec<SpikeEvent> {
        let mut out = Vec::new();
        for (slot, &site) in self.synapse_sites.iter().enumerate() {
            if self.v[site as usize] > self.threshold {
                out.push(SpikeEvent { source_gid: self.gid, synapse_slot: slot as u32, local_step, global_step });
            }
        }
        self.comparisons += self.synapse_sites.len() as u64;
        out
    }

    /// Queue `weight` of injected current at the compartment behind `slot`;
    /// consumed by the next `step`.
    pub fn deliver(&mut self, slot: usize, weight: f64) -> Result<()> {
        let site = *self
            .synapse_sites
            .get(slot)
            .ok_or(Error::SlotOutOfRange { slot, synapses: self.synapse_sites.len() })?;
        self.pending_current[site as usize] += weight;
        Ok(())
    }

    /// Solve flops plus comparisons: the per-neuron work counter.
    pub fn flops(&self) -> u64 {
        self.solve_flops + self.comparisons
    }
}
