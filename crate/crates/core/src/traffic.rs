//! Open-loop synthetic traffic.
//!
//! Each core injects with a per-cycle Bernoulli trial of probability λ, a
//! discretized Poisson process capped at one request per core per cycle.
//! Arrivals and destinations come from separate streams so that changing the
//! destination policy leaves the arrival pattern untouched.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::addressing::{AddressLayout, PhysicalLocation};
use crate::engine::{AccessKind, SimState, Workload};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::topology::NetworkGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Addressing {
    Interleaved,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub lambda: f64,
    pub p_local: f64,
    pub seed: u64,
    pub addressing: Addressing,
    pub store_fraction: f64,
}

impl SyntheticConfig {
    /// Uniform destinations over the interleaved map.
    pub fn uniform(lambda: f64, seed: u64) -> Self {
        SyntheticConfig {
            lambda,
            p_local: 0.0,
            seed,
            addressing: Addressing::Interleaved,
            store_fraction: 0.0,
        }
    }

    /// Destinations biased towards the issuing tile's sequential region.
    pub fn local_biased(lambda: f64, p_local: f64, seed: u64) -> Self {
        SyntheticConfig {
            lambda,
            p_local,
            seed,
            addressing: Addressing::Hybrid,
            store_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !unit(self.p_local) {
            return Err(Error::Config(format!("p_local {} outside [0, 1]", self.p_local)));
        }
        if !unit(self.store_fraction) {
            return Err(Error::Config(format!("store fraction {} outside [0, 1]", self.store_fraction)));
        }
        if self.addressing == Addressing::Interleaved && self.p_local > 0.0 {
            return Err(Error::Config("p_local needs hybrid addressing".into()));
        }
        Ok(())
    }
}

/// A generated access before it enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Generated {
    pub kind: AccessKind,
    pub addr: u32,
    pub target: PhysicalLocation,
}

/// Per-core random streams.
#[derive(Debug, Clone)]
pub struct CoreStreams {
    pub arrivals: ChaCha8Rng,
    pub destinations: ChaCha8Rng,
}

impl CoreStreams {
    pub fn new(seed: u64, core: u32) -> Self {
        let key = derive_seed(&[seed]);
        CoreStreams {
            arrivals: stream(key, 2 * core as u64),
            destinations: stream(key, 2 * core as u64 + 1),
        }
    }
}

pub fn uniform_destination<R: Rng + ?Sized>(rng: &mut R, layout: &AddressLayout) -> PhysicalLocation {
    PhysicalLocation {
        tile: rng.gen_range(0..layout.num_tiles()),
        bank: rng.gen_range(0..layout.banks_per_tile()),
        row: rng.gen_range(0..layout.rows_per_bank()),
    }
}

/// With probability `p_local` a word in `tile`'s sequential region,
/// otherwise a word in the interleaved part of L1 above the window.
/// Returns the program address and its hybrid-map location.
pub fn local_biased_destination<R: Rng + ?Sized>(
    rng: &mut R,
    tile: u32,
    cfg: &SyntheticConfig,
    layout: &AddressLayout,
) -> Result<(u32, PhysicalLocation)> {
    let local = rng.gen::<f64>() < cfg.p_local;
    let addr = if local {
        let base = layout.sequential_base(tile)?;
        let words = layout.seq_region_bytes() / 4;
        base + 4 * rng.gen_range(0..words)
    } else {
        let lo = layout.seq_window_bytes() / 4;
        let hi = layout.total_words();
        if lo >= hi {
            return Err(Error::Config("no interleaved memory outside the sequential window".into()));
        }
        4 * rng.gen_range(lo..hi)
    };
    Ok((addr, layout.decode(addr, true)?))
}

/// One Bernoulli trial for `core` at this cycle.
pub fn maybe_generate(
    cfg: &SyntheticConfig,
    layout: &AddressLayout,
    tile: u32,
    streams: &mut CoreStreams,
) -> Result<Option<Generated>> {
    if !(streams.arrivals.gen::<f64>() < cfg.lambda) {
        return Ok(None);
    }
    let rng = &mut streams.destinations;
    let kind = if rng.gen::<f64>() < cfg.store_fraction {
        AccessKind::Store
    } else {
        AccessKind::Load
    };
    let (addr, target) = match cfg.addressing {
        Addressing::Interleaved => {
            let target = uniform_destination(rng, layout);
            (layout.encode_interleaved(target)?, target)
        }
        Addressing::Hybrid => local_biased_destination(rng, tile, cfg, layout)?,
    };
    Ok(Some(Generated { kind, addr, target }))
}

/// Drives every core of a cluster with [`maybe_generate`].
#[derive(Debug, Clone)]
pub struct SyntheticWorkload {
    cfg: SyntheticConfig,
    layout: AddressLayout,
    cores_per_tile: u32,
    streams: Vec<CoreStreams>,
    /// No new requests from this cycle on.
    pub stop_at: u64,
}

impl SyntheticWorkload {
    pub fn new(cfg: SyntheticConfig, graph: &NetworkGraph) -> Result<Self> {
        cfg.validate()?;
        let cluster = graph
            .cluster
            .ok_or_else(|| Error::Config("synthetic traffic needs a cluster graph".into()))?;
        let streams = (0..graph.num_cores()).map(|c| CoreStreams::new(cfg.seed, c)).collect();
        Ok(SyntheticWorkload {
            cfg,
            layout: cluster.layout,
            cores_per_tile: cluster.cores_per_tile,
            streams,
            stop_at: u64::MAX,
        })
    }
}

impl Workload for SyntheticWorkload {
    fn drive(&mut self, graph: &NetworkGraph, state: &mut SimState) -> Result<()> {
        if state.cycle() >= self.stop_at {
            return Ok(());
        }
        for core in 0..self.streams.len() as u32 {
            let tile = core / self.cores_per_tile;
            if let Some(g) = maybe_generate(&self.cfg, &self.layout, tile, &mut self.streams[core as usize])? {
                let bank = self.layout.global_bank(g.target);
                state.enqueue(graph, core, g.kind, g.addr, g.target, bank)?;
            }
        }
        Ok(())
    }
}
