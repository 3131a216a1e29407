//! Cycle-accurate simulation kernel.
//!
//! Each cycle evaluates the response network first and then the request
//! network. Within a network every holder (core source queue, bank,
//! register) with a head item offers it; the item walks the combinational
//! switches along its route in topological order, losing to round-robin
//! arbitration or winning through to the next holder. It moves only when that
//! holder is ready. Readiness is registered: a holder is ready when it had a
//! free slot at the start of the phase. An item that wins through to a holder
//! that is not ready, or loses at a later switch, is withdrawn and arbitration
//! is rerun, so a blocked item never holds a switch output that another item
//! could use.
//!
//! A bank holds one access. It is evaluated after its response has drained,
//! which lets it accept one request every cycle while responses flow.

use std::collections::VecDeque;
use std::fmt;

use crate::addressing::PhysicalLocation;
use crate::error::{Error, Result};
use crate::metrics::{MeasureWindow, Metrics, RunLog};
use crate::topology::{Net, NetworkGraph, NodeId, NodeKind, NO_ROUTE};

/// Default outstanding-load window per core.
pub const DEFAULT_WINDOW: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Load,
    Store,
}

/// An in-flight transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub core: u32,
    pub kind: AccessKind,
    pub addr: u32,
    pub target: PhysicalLocation,
    /// Flat bank index of `target`.
    pub bank: u32,
    pub gen_cycle: u64,
    pub inject_cycle: u64,
}

/// A retired transaction: a load whose response reached its core, or a store
/// accepted by its bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub req_id: u64,
    pub core: u32,
    pub kind: AccessKind,
    pub bank: u32,
    pub gen_cycle: u64,
    pub inject_cycle: u64,
    pub complete_cycle: u64,
}

impl Completion {
    /// Generation-to-completion latency.
    pub fn latency(&self) -> u64 {
        self.complete_cycle - self.gen_cycle
    }

    pub fn network_latency(&self) -> u64 {
        self.complete_cycle - self.inject_cycle
    }
}

/// One movement of an item between two holders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub req_id: u64,
    pub from: NodeId,
    pub to: NodeId,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} req={} {} -> {}", self.cycle, self.req_id, self.from, self.to)
    }
}

/// Round-robin grant: the first candidate at or after `pointer`, cyclically
/// over `num_inputs` inputs.
pub fn arbitrate_rr(candidates: &[u16], pointer: u16, num_inputs: u16) -> Option<u16> {
    candidates
        .iter()
        .copied()
        .min_by_key(|&c| (c + num_inputs - pointer % num_inputs) % num_inputs)
}

const NO_HOP: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    slot: u32,
    src: NodeId,
    dest: u32,
    last_hop: u32,
    blocked: bool,
}

#[derive(Debug, Clone, Copy)]
struct Hop {
    switch: NodeId,
    input: u16,
    output: u16,
    prev: u32,
}

#[derive(Debug, Default)]
struct Scratch {
    cands: Vec<Candidate>,
    hops: Vec<Hop>,
    arrivals: Vec<Vec<(u16, u32)>>,
    touched: Vec<Vec<NodeId>>,
    finals: Vec<(u32, NodeId)>,
    fires: Vec<(u32, NodeId)>,
    sort_buf: Vec<(u16, u16, u16, u32)>,
    reached: Vec<bool>,
}

/// Full simulation state. Owned by one run; no sharing between runs.
#[derive(Debug)]
pub struct SimState {
    cycle: u64,
    window: u32,
    slab: Vec<Request>,
    free: Vec<u32>,
    queues: Vec<VecDeque<u32>>,
    capacity: Vec<u32>,
    /// Round-robin pointer per switch output, indexed like `link_counts`.
    rr: Vec<u16>,
    outstanding: Vec<u32>,
    link_base: Vec<u32>,
    link_counts: Vec<u64>,
    req_holders: Vec<NodeId>,
    resp_holders: Vec<NodeId>,
    next_id: u64,
    generated: u64,
    retired: u64,
    completions: Vec<Completion>,
    events: Option<Vec<TraceEvent>>,
    check: bool,
    scratch: Scratch,
}

impl SimState {
    pub fn new(graph: &NetworkGraph, window: u32) -> Self {
        let n = graph.nodes.len();
        let mut capacity = vec![0u32; n];
        let mut link_base = Vec::with_capacity(n + 1);
        let mut req_holders = Vec::new();
        let mut resp_holders = Vec::new();
        let mut links = 0u32;
        for (id, node) in graph.nodes.iter().enumerate() {
            link_base.push(links);
            links += node.out.len() as u32;
            match node.kind {
                NodeKind::Core(_) => {
                    capacity[id] = u32::MAX;
                    req_holders.push(id as NodeId);
                }
                NodeKind::Bank(_) => {
                    capacity[id] = 1;
                    resp_holders.push(id as NodeId);
                }
                NodeKind::Register { capacity: c } => {
                    capacity[id] = c as u32;
                    match node.net {
                        Some(Net::Request) => req_holders.push(id as NodeId),
                        _ => resp_holders.push(id as NodeId),
                    }
                }
                NodeKind::Switch { .. } => {}
            }
        }
        link_base.push(links);
        SimState {
            cycle: 0,
            window: window.max(1),
            slab: Vec::new(),
            free: Vec::new(),
            queues: vec![VecDeque::new(); n],
            capacity,
            rr: vec![0; links as usize],
            outstanding: vec![0; graph.num_cores() as usize],
            link_base,
            link_counts: vec![0; links as usize],
            req_holders,
            resp_holders,
            next_id: 0,
            generated: 0,
            retired: 0,
            completions: Vec::new(),
            events: None,
            check: cfg!(debug_assertions),
            scratch: Scratch {
                arrivals: vec![Vec::new(); n],
                touched: vec![Vec::new(); graph.max_level() as usize + 1],
                ..Default::default()
            },
        }
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    /// Enables the per-cycle conservation and capacity checks.
    pub fn set_invariant_checks(&mut self, on: bool) {
        self.check = on;
    }

    pub fn enable_event_trace(&mut self) {
        self.events = Some(Vec::new());
    }

    pub fn take_events(&mut self) -> Vec<TraceEvent> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn drain_completions(&mut self) -> std::vec::Drain<'_, Completion> {
        self.completions.drain(..)
    }

    pub fn generated(&self) -> u64 {
        self.generated
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    /// Requests generated but not yet retired, queued or in flight.
    pub fn live(&self) -> u64 {
        self.generated - self.retired
    }

    pub fn outstanding(&self, core: u32) -> u32 {
        self.outstanding[core as usize]
    }

    pub fn source_queue_len(&self, graph: &NetworkGraph, core: u32) -> usize {
        self.queues[graph.core_nodes[core as usize] as usize].len()
    }

    /// Loads issued or queued at a core and not yet completed.
    pub fn pending_loads(&self, graph: &NetworkGraph, core: u32) -> u32 {
        let q = &self.queues[graph.core_nodes[core as usize] as usize];
        let queued = q.iter().filter(|&&s| self.slab[s as usize].kind == AccessKind::Load).count();
        self.outstanding[core as usize] + queued as u32
    }

    pub fn occupancy(&self, node: NodeId) -> usize {
        self.queues[node as usize].len()
    }

    pub fn link_counts(&self) -> &[u64] {
        &self.link_counts
    }

    /// Traversal count of output `port` of `node`.
    pub fn link_count(&self, node: NodeId, port: u16) -> u64 {
        self.link_counts[(self.link_base[node as usize] + port as u32) as usize]
    }

    /// Traversals of links that leave a tile or are not owned by any tile.
    pub fn inter_tile_traversals(&self, graph: &NetworkGraph) -> u64 {
        graph
            .links()
            .filter(|(from, _, to)| {
                let a = graph.node(*from).tile;
                let b = graph.node(to.node).tile;
                a.is_none() || b.is_none() || a != b
            })
            .map(|(from, port, _)| self.link_count(from, port))
            .sum()
    }

    /// Puts a new request at the tail of `core`'s source queue and returns its
    /// id.
    pub fn enqueue(
        &mut self,
        graph: &NetworkGraph,
        core: u32,
        kind: AccessKind,
        addr: u32,
        target: PhysicalLocation,
        bank: u32,
    ) -> Result<u64> {
        if bank >= graph.num_banks() || core >= graph.num_cores() {
            return Err(Error::Fault {
                cycle: self.cycle,
                msg: format!("request core {core} bank {bank} outside the graph"),
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = Request {
            id,
            core,
            kind,
            addr,
            target,
            bank,
            gen_cycle: self.cycle,
            inject_cycle: u64::MAX,
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.slab[s as usize] = req;
                s
            }
            None => {
                self.slab.push(req);
                (self.slab.len() - 1) as u32
            }
        };
        self.queues[graph.core_nodes[core as usize] as usize].push_back(slot);
        self.generated += 1;
        Ok(id)
    }

    /// Advances one cycle.
    pub fn step(&mut self, graph: &NetworkGraph) -> Result<()> {
        self.phase(graph, Net::Response)?;
        self.phase(graph, Net::Request)?;
        if self.check {
            self.check_invariants(graph)?;
        }
        self.cycle += 1;
        Ok(())
    }

    fn fault(&self, msg: String) -> Error {
        Error::Fault { cycle: self.cycle, msg }
    }

    fn phase(&mut self, graph: &NetworkGraph, net: Net) -> Result<()> {
        let mut sc = std::mem::take(&mut self.scratch);
        sc.cands.clear();
        sc.fires.clear();

        let holders = match net {
            Net::Request => &self.req_holders,
            Net::Response => &self.resp_holders,
        };
        for &h in holders {
            let Some(&slot) = self.queues[h as usize].front() else { continue };
            let req = &self.slab[slot as usize];
            let dest = match graph.node(h).kind {
                NodeKind::Core(c) => {
                    if req.kind == AccessKind::Load && self.outstanding[c as usize] >= self.window {
                        continue;
                    }
                    req.bank
                }
                NodeKind::Bank(_) => req.core,
                _ => match net {
                    Net::Request => req.bank,
                    Net::Response => req.core,
                },
            };
            sc.cands.push(Candidate {
                slot,
                src: h,
                dest,
                last_hop: NO_HOP,
                blocked: false,
            });
        }

        // Rerun arbitration without the candidates that cannot move this
        // cycle; each pass blocks at least one more, so this terminates.
        loop {
            if let Err(e) = self.arbitrate(graph, &mut sc) {
                self.scratch = sc;
                return Err(e);
            }
            let mut retry = false;
            sc.reached.clear();
            sc.reached.resize(sc.cands.len(), false);
            for &(ci, dest) in &sc.finals {
                sc.reached[ci as usize] = true;
                if !self.ready(graph, dest) {
                    sc.cands[ci as usize].blocked = true;
                    retry = true;
                }
            }
            // an item that lost further down releases the outputs it won
            for (cand, &reached) in sc.cands.iter_mut().zip(&sc.reached) {
                if !cand.blocked && !reached && cand.last_hop != NO_HOP {
                    cand.blocked = true;
                    retry = true;
                }
            }
            if !retry {
                break;
            }
        }
        for &(ci, dest) in &sc.finals {
            if self.ready(graph, dest) {
                sc.fires.push((ci, dest));
            }
        }

        if self.check {
            let mut dests: Vec<NodeId> = sc.finals.iter().map(|f| f.1).collect();
            dests.sort_unstable();
            if dests.windows(2).any(|w| w[0] == w[1]) {
                self.scratch = sc;
                return Err(self.fault("two items delivered to one holder input".into()));
            }
        }

        for i in 0..sc.fires.len() {
            let (ci, dest) = sc.fires[i];
            let cand = sc.cands[ci as usize];
            let popped = self.queues[cand.src as usize].pop_front();
            debug_assert_eq!(popped, Some(cand.slot));
            let base = self.link_base[cand.src as usize] as usize;
            self.link_counts[base] += 1;
            let mut hi = cand.last_hop;
            while hi != NO_HOP {
                let h = sc.hops[hi as usize];
                hi = h.prev;
                let inputs = graph.node(h.switch).num_inputs() as u16;
                let next = h.input + 1;
                self.rr[self.link_base[h.switch as usize] as usize + h.output as usize] = if next == inputs { 0 } else { next };
                self.link_counts[self.link_base[h.switch as usize] as usize + h.output as usize] += 1;
            }

            let src_kind = &graph.node(cand.src).kind;
            if let NodeKind::Core(c) = *src_kind {
                let req = &mut self.slab[cand.slot as usize];
                req.inject_cycle = self.cycle;
                if req.kind == AccessKind::Load {
                    self.outstanding[c as usize] += 1;
                }
            }
            if let Some(ev) = self.events.as_mut() {
                ev.push(TraceEvent {
                    cycle: self.cycle,
                    req_id: self.slab[cand.slot as usize].id,
                    from: cand.src,
                    to: dest,
                });
            }

            match graph.node(dest).kind {
                NodeKind::Core(c) => {
                    self.outstanding[c as usize] -= 1;
                    self.retire(cand.slot);
                }
                NodeKind::Bank(_) if self.slab[cand.slot as usize].kind == AccessKind::Store => {
                    self.retire(cand.slot);
                }
                _ => self.queues[dest as usize].push_back(cand.slot),
            }
        }

        self.scratch = sc;
        Ok(())
    }

    /// Readiness against start-of-phase occupancy.
    fn ready(&self, graph: &NetworkGraph, holder: NodeId) -> bool {
        match graph.node(holder).kind {
            NodeKind::Core(_) => true,
            _ => (self.queues[holder as usize].len() as u32) < self.capacity[holder as usize],
        }
    }

    /// One arbitration pass over the unblocked candidates. Fills `sc.hops`
    /// and `sc.finals`.
    fn arbitrate(&self, graph: &NetworkGraph, sc: &mut Scratch) -> Result<()> {
        sc.hops.clear();
        sc.finals.clear();
        for ci in 0..sc.cands.len() {
            let cand = &mut sc.cands[ci];
            cand.last_hop = NO_HOP;
            if cand.blocked {
                continue;
            }
            let next = graph.node(cand.src).out[0].expect("holders are connected");
            let nn = graph.node(next.node);
            if nn.is_switch() {
                if sc.arrivals[next.node as usize].is_empty() {
                    sc.touched[nn.level as usize].push(next.node);
                }
                sc.arrivals[next.node as usize].push((next.port, ci as u32));
            } else {
                sc.finals.push((ci as u32, next.node));
            }
        }

        for level in 0..sc.touched.len() {
            let mut touched = std::mem::take(&mut sc.touched[level]);
            for &sw in &touched {
                let node = graph.node(sw);
                let inputs = node.num_inputs() as u16;
                let mut arr = std::mem::take(&mut sc.arrivals[sw as usize]);
                sc.sort_buf.clear();
                for &(input, ci) in &arr {
                    let dest = sc.cands[ci as usize].dest;
                    let out = node.routes[dest as usize];
                    if out == NO_ROUTE {
                        // leave the scratch buffers consistent for the next phase
                        for t in sc.touched.iter_mut() {
                            for &s in t.iter() {
                                sc.arrivals[s as usize].clear();
                            }
                            t.clear();
                        }
                        return Err(self.fault(format!("{} has no route for destination {dest}", node.name)));
                    }
                    let ptr = self.rr[self.link_base[sw as usize] as usize + out as usize];
                    let rank = if input >= ptr { input - ptr } else { input + inputs - ptr };
                    sc.sort_buf.push((out, rank, input, ci));
                }
                sc.sort_buf.sort_unstable();
                let mut last_out = u16::MAX;
                for i in 0..sc.sort_buf.len() {
                    let (out, _, input, ci) = sc.sort_buf[i];
                    if out == last_out {
                        continue;
                    }
                    last_out = out;
                    let cand = &mut sc.cands[ci as usize];
                    sc.hops.push(Hop {
                        switch: sw,
                        input,
                        output: out,
                        prev: cand.last_hop,
                    });
                    cand.last_hop = (sc.hops.len() - 1) as u32;
                    let next = node.out[out as usize].expect("switch outputs are connected");
                    let nn = graph.node(next.node);
                    if nn.is_switch() {
                        if sc.arrivals[next.node as usize].is_empty() {
                            sc.touched[nn.level as usize].push(next.node);
                        }
                        sc.arrivals[next.node as usize].push((next.port, ci));
                    } else {
                        sc.finals.push((ci, next.node));
                    }
                }
                arr.clear();
                sc.arrivals[sw as usize] = arr;
            }
            touched.clear();
            sc.touched[level] = touched;
        }
        Ok(())
    }

    fn retire(&mut self, slot: u32) {
        let r = self.slab[slot as usize];
        self.completions.push(Completion {
            req_id: r.id,
            core: r.core,
            kind: r.kind,
            bank: r.bank,
            gen_cycle: r.gen_cycle,
            inject_cycle: r.inject_cycle,
            complete_cycle: self.cycle,
        });
        self.retired += 1;
        self.free.push(slot);
    }

    /// Conservation: every live request sits in exactly one holder. No holder
    /// exceeds its capacity.
    pub fn check_invariants(&self, graph: &NetworkGraph) -> Result<()> {
        let mut held = 0u64;
        for (id, q) in self.queues.iter().enumerate() {
            if q.len() as u64 > self.capacity[id] as u64 {
                return Err(self.fault(format!(
                    "{} holds {} items, capacity {}",
                    graph.nodes[id].name,
                    q.len(),
                    self.capacity[id]
                )));
            }
            held += q.len() as u64;
        }
        if held != self.live() {
            return Err(self.fault(format!(
                "conservation violated: {} generated, {} retired, {held} held",
                self.generated, self.retired
            )));
        }
        let free = self.free.len() as u64;
        if self.slab.len() as u64 != free + held {
            return Err(self.fault("request slab leaked".into()));
        }
        Ok(())
    }

    /// True when no request is queued or in flight.
    pub fn is_idle(&self) -> bool {
        self.live() == 0
    }
}

/// Source of requests driven once per cycle before the network steps.
pub trait Workload {
    /// Pushes this cycle's new requests into the source queues.
    fn drive(&mut self, graph: &NetworkGraph, state: &mut SimState) -> Result<()>;

    /// Observes completed transactions after each step.
    fn on_complete(&mut self, _c: &Completion) {}

    /// True when a closed-loop workload has issued everything.
    fn exhausted(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub horizon: u64,
    pub warmup: u64,
    pub window: u32,
    pub check_invariants: bool,
}

impl RunConfig {
    /// Default 20 % warm-up.
    pub fn with_horizon(horizon: u64) -> Self {
        RunConfig {
            horizon,
            warmup: horizon / 5,
            window: DEFAULT_WINDOW,
            check_invariants: false,
        }
    }
}

/// Runs an open-loop workload for `cfg.horizon` cycles and reduces the
/// result.
pub fn run(graph: &NetworkGraph, workload: &mut dyn Workload, cfg: &RunConfig) -> Result<Metrics> {
    let log = run_log(graph, workload, cfg)?;
    log.finalize()
}

/// Like [`run`] but returns the raw log.
pub fn run_log(graph: &NetworkGraph, workload: &mut dyn Workload, cfg: &RunConfig) -> Result<RunLog> {
    let window = MeasureWindow::new(cfg.warmup, cfg.horizon)?;
    let mut state = SimState::new(graph, cfg.window);
    state.set_invariant_checks(cfg.check_invariants);
    let mut log = RunLog::new(window, graph.num_cores());
    for cycle in 0..cfg.horizon {
        if cycle == cfg.warmup {
            log.offered_start = state.generated();
        }
        workload.drive(graph, &mut state)?;
        state.step(graph)?;
        for c in state.drain_completions() {
            workload.on_complete(&c);
            log.record(&c);
        }
    }
    log.offered_end = state.generated();
    log.inter_tile_traversals = state.inter_tile_traversals(graph);
    log.link_counts = state.link_counts().to_vec();
    Ok(log)
}
