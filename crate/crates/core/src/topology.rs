//! Network graphs for the request and response interconnects.
//!
//! A [`NetworkGraph`] holds both networks at once. Endpoints (cores and
//! banks) are shared: a core is the source of the request network and the
//! sink of the response network, a bank the other way round. Every other node
//! belongs to exactly one of the two networks.
//!
//! Switches are combinational; registers are elastic buffers and cost one
//! cycle each. Routing is oblivious: every switch carries a table mapping a
//! destination (bank index for requests, core index for responses) to one of
//! its outputs.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::addressing::AddressLayout;
use crate::error::{Error, Result};

pub type NodeId = u32;

/// Marks a missing routing-table entry.
pub const NO_ROUTE: u16 = u16::MAX;

/// Default elastic buffer depth.
pub const DEFAULT_BUFFER_DEPTH: u16 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Net {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchSpec {
    pub num_masters: usize,
    pub num_slaves: usize,
    pub output_elastic: bool,
}

impl SwitchSpec {
    pub fn new(num_masters: usize, num_slaves: usize, output_elastic: bool) -> Result<Self> {
        if num_masters == 0 || num_slaves == 0 {
            return Err(Error::Config(format!(
                "switch needs at least one master and one slave, got {num_masters}x{num_slaves}"
            )));
        }
        if num_masters >= NO_ROUTE as usize || num_slaves >= NO_ROUTE as usize {
            return Err(Error::Config("switch too wide".into()));
        }
        Ok(SwitchSpec {
            num_masters,
            num_slaves,
            output_elastic,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    /// Master endpoint.
    Core(u32),
    /// Slave endpoint.
    Bank(u32),
    Switch { inputs: u16, outputs: u16 },
    Register { capacity: u16 },
}

/// Destination of a link: a node and one of its input ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortRef {
    pub node: NodeId,
    pub port: u16,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    /// `None` for endpoints, which sit on both networks.
    pub net: Option<Net>,
    /// Owning tile, `None` for group- or cluster-level nodes.
    pub tile: Option<u32>,
    pub name: String,
    /// Outgoing link per output port. Endpoints have a single output: the
    /// request network for cores, the response network for banks.
    pub out: Vec<Option<PortRef>>,
    /// Switch routing table, indexed by destination.
    pub routes: Vec<u16>,
    /// Combinational depth of a switch (0 when fed only by registers or
    /// endpoints).
    pub level: u16,
}

impl Node {
    pub fn is_switch(&self) -> bool {
        matches!(self.kind, NodeKind::Switch { .. })
    }

    pub fn is_register(&self) -> bool {
        matches!(self.kind, NodeKind::Register { .. })
    }

    pub fn num_inputs(&self) -> usize {
        match self.kind {
            NodeKind::Switch { inputs, .. } => inputs as usize,
            _ => 1,
        }
    }
}

/// Interconnect variant of the 256-core cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// One radix-4 butterfly shared by the four cores of each tile.
    Top1,
    /// Four parallel butterflies, one per core.
    Top4,
    /// Four local groups with local crossbars and N/NE/E butterflies.
    TopH,
    /// Ideal full crossbar.
    TopX,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Top1, Variant::Top4, Variant::TopH, Variant::TopX];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Top1 => "top1",
            Variant::Top4 => "top4",
            Variant::TopH => "toph",
            Variant::TopX => "topx",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "top1" => Ok(Variant::Top1),
            "top4" => Ok(Variant::Top4),
            "toph" => Ok(Variant::TopH),
            "topx" => Ok(Variant::TopX),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

pub const TOPH_GROUPS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterConfig {
    pub variant: Variant,
    pub layout: AddressLayout,
    pub cores_per_tile: u32,
    pub buffer_depth: u16,
}

impl ClusterConfig {
    pub fn new(variant: Variant) -> Self {
        ClusterConfig {
            variant,
            layout: AddressLayout::default(),
            cores_per_tile: 4,
            buffer_depth: DEFAULT_BUFFER_DEPTH,
        }
    }

    pub fn with_layout(mut self, layout: AddressLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn tiles(&self) -> u32 {
        self.layout.num_tiles()
    }

    pub fn banks_per_tile(&self) -> u32 {
        self.layout.banks_per_tile()
    }

    pub fn num_cores(&self) -> u32 {
        self.tiles() * self.cores_per_tile
    }

    pub fn num_banks(&self) -> u32 {
        self.layout.num_banks()
    }

    /// Remote master ports per tile.
    pub fn remote_ports(&self) -> u32 {
        match self.variant {
            Variant::Top1 => 1,
            Variant::Top4 => self.cores_per_tile,
            Variant::TopH => TOPH_GROUPS,
            Variant::TopX => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.cores_per_tile == 0 {
            return Err(Error::Config("cores_per_tile must be positive".into()));
        }
        if self.buffer_depth == 0 {
            return Err(Error::Config("buffer depth must be positive".into()));
        }
        let tiles = self.tiles();
        match self.variant {
            Variant::Top1 | Variant::Top4 => {
                if !is_power_of(tiles as usize, 4) || tiles < 16 {
                    return Err(Error::Config(format!(
                        "{} needs a power-of-4 tile count of at least 16, got {tiles}",
                        self.variant
                    )));
                }
            }
            Variant::TopH => {
                let tpg = tiles / TOPH_GROUPS;
                if tiles % TOPH_GROUPS != 0 || tpg < 4 || !is_power_of(tpg as usize, 4) {
                    return Err(Error::Config(format!(
                        "toph needs 4 groups of a power-of-4 tile count (at least 4), got {tiles} tiles"
                    )));
                }
                if !(1..=TOPH_GROUPS).contains(&self.cores_per_tile) {
                    return Err(Error::Config(
                        "toph tiles route through a 4-port router; use at most 4 cores per tile".into(),
                    ));
                }
            }
            Variant::TopX => {}
        }
        if self.num_cores() >= NO_ROUTE as u32 || self.num_banks() >= NO_ROUTE as u32 {
            return Err(Error::Config("cluster too large".into()));
        }
        Ok(())
    }

    pub fn core_tile(&self, core: u32) -> u32 {
        core / self.cores_per_tile
    }

    pub fn bank_tile(&self, bank: u32) -> u32 {
        bank / self.banks_per_tile()
    }

    pub fn tiles_per_group(&self) -> u32 {
        self.tiles() / TOPH_GROUPS
    }

    pub fn group(&self, tile: u32) -> u32 {
        tile / self.tiles_per_group()
    }

    pub fn classify(&self, core: u32, bank: u32) -> LatencyClass {
        let (ct, bt) = (self.core_tile(core), self.bank_tile(bank));
        if ct == bt {
            LatencyClass::Local
        } else if self.variant == Variant::TopH && self.group(ct) == self.group(bt) {
            LatencyClass::IntraGroup
        } else {
            LatencyClass::Remote
        }
    }

    /// Expected round-trip zero-load latency for a pair class.
    pub fn expected_zero_load(&self, class: LatencyClass) -> u64 {
        match (self.variant, class) {
            (Variant::TopX, _) | (_, LatencyClass::Local) => 1,
            (_, LatencyClass::IntraGroup) => 3,
            (_, LatencyClass::Remote) => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LatencyClass {
    Local,
    IntraGroup,
    Remote,
}

impl fmt::Display for LatencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatencyClass::Local => "local",
            LatencyClass::IntraGroup => "intra-group",
            LatencyClass::Remote => "remote",
        })
    }
}

fn is_power_of(n: usize, radix: usize) -> bool {
    if n == 0 || radix < 2 {
        return false;
    }
    let mut v = n;
    while v % radix == 0 {
        v /= radix;
    }
    v == 1
}

fn ilog(n: usize, radix: usize) -> usize {
    let mut layers = 0;
    let mut v = n;
    while v > 1 {
        v /= radix;
        layers += 1;
    }
    layers
}

/// Both interconnects of a cluster (or of a standalone switch network).
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub nodes: Vec<Node>,
    pub core_nodes: Vec<NodeId>,
    pub bank_nodes: Vec<NodeId>,
    /// Present when the graph was built by [`build_cluster`].
    pub cluster: Option<ClusterConfig>,
    max_level: u16,
}

/// A routed path between two endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub register_count: u32,
}

impl NetworkGraph {
    pub fn num_cores(&self) -> u32 {
        self.core_nodes.len() as u32
    }

    pub fn num_banks(&self) -> u32 {
        self.bank_nodes.len() as u32
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn max_level(&self) -> u16 {
        self.max_level
    }

    pub fn num_links(&self) -> usize {
        self.nodes.iter().map(|n| n.out.iter().flatten().count()).sum()
    }

    /// All links as `(source node, output port, destination)`.
    pub fn links(&self) -> impl Iterator<Item = (NodeId, u16, PortRef)> + '_ {
        self.nodes.iter().enumerate().flat_map(|(id, n)| {
            n.out
                .iter()
                .enumerate()
                .filter_map(move |(p, to)| to.map(|to| (id as NodeId, p as u16, to)))
        })
    }

    /// Follows the routing tables from `from` to the destination endpoint.
    ///
    /// `dest` is a bank index on the request network and a core index on the
    /// response network.
    pub fn route(&self, net: Net, from: NodeId, dest: u32) -> Result<Path> {
        let target = match net {
            Net::Request => self.bank_nodes.get(dest as usize).copied(),
            Net::Response => self.core_nodes.get(dest as usize).copied(),
        }
        .ok_or_else(|| Error::Routing(format!("destination {dest} does not exist")))?;
        let mut nodes = vec![from];
        let mut register_count = 0;
        let mut cur = from;
        let limit = self.nodes.len() + 1;
        loop {
            let node = self.node(cur);
            let port = match node.kind {
                NodeKind::Switch { .. } => {
                    let r = node.routes.get(dest as usize).copied().unwrap_or(NO_ROUTE);
                    if r == NO_ROUTE {
                        return Err(Error::Routing(format!(
                            "{} has no route to {:?} destination {dest}",
                            node.name, net
                        )));
                    }
                    r as usize
                }
                _ => 0,
            };
            let next = node
                .out
                .get(port)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Routing(format!("{} port {port} is unconnected", node.name)))?;
            cur = next.node;
            nodes.push(cur);
            let n = self.node(cur);
            match n.kind {
                NodeKind::Register { .. } => register_count += 1,
                NodeKind::Core(_) | NodeKind::Bank(_) => {
                    if cur != target {
                        return Err(Error::Routing(format!(
                            "route towards {dest} ended at {}",
                            n.name
                        )));
                    }
                    break;
                }
                NodeKind::Switch { .. } => {}
            }
            if nodes.len() > limit {
                return Err(Error::Routing(format!("routing loop towards {dest}")));
            }
        }
        Ok(Path {
            nodes,
            register_count,
        })
    }

    pub fn request_path(&self, core: u32, bank: u32) -> Result<Path> {
        let from = *self
            .core_nodes
            .get(core as usize)
            .ok_or_else(|| Error::Routing(format!("core {core} does not exist")))?;
        self.route(Net::Request, from, bank)
    }

    pub fn response_path(&self, bank: u32, core: u32) -> Result<Path> {
        let from = *self
            .bank_nodes
            .get(bank as usize)
            .ok_or_else(|| Error::Routing(format!("bank {bank} does not exist")))?;
        self.route(Net::Response, from, core)
    }

    /// Round-trip cycles of a load from `core` to `bank` in an empty network:
    /// one cycle of bank access plus one per register on either path.
    pub fn zero_load_latency(&self, core: u32, bank: u32) -> Result<u64> {
        let req = self.request_path(core, bank)?;
        let resp = self.response_path(bank, core)?;
        Ok(1 + req.register_count as u64 + resp.register_count as u64)
    }

    /// Number of distinct directed paths between two endpoints on `net`,
    /// ignoring routing tables.
    pub fn count_structural_paths(&self, net: Net, from: NodeId, to: NodeId) -> u64 {
        let mut memo: Vec<Option<u64>> = vec![None; self.nodes.len()];
        self.count_paths_rec(net, from, to, true, &mut memo)
    }

    fn count_paths_rec(&self, net: Net, cur: NodeId, to: NodeId, first: bool, memo: &mut Vec<Option<u64>>) -> u64 {
        if !first && cur == to {
            return 1;
        }
        let node = self.node(cur);
        if !first && node.net.is_none() {
            return 0;
        }
        if let Some(v) = memo[cur as usize] {
            return v;
        }
        let mut total = 0;
        for link in node.out.iter().flatten() {
            let next = self.node(link.node);
            if next.net.is_some() && next.net != Some(net) {
                continue;
            }
            total += self.count_paths_rec(net, link.node, to, false, memo);
        }
        if !first {
            memo[cur as usize] = Some(total);
        }
        total
    }

    /// Plain-text structural listing. One `node` line per node, one `link`
    /// line per link and, with `routes`, one `route` line per table entry.
    pub fn dump(&self, routes: bool) -> String {
        let mut s = String::new();
        for (id, n) in self.nodes.iter().enumerate() {
            let kind = match &n.kind {
                NodeKind::Core(c) => format!("core {c}"),
                NodeKind::Bank(b) => format!("bank {b}"),
                NodeKind::Switch { inputs, outputs } => format!("switch {inputs}x{outputs}"),
                NodeKind::Register { capacity } => format!("register {capacity}"),
            };
            let net = match n.net {
                Some(Net::Request) => "req",
                Some(Net::Response) => "resp",
                None => "both",
            };
            let tile = n.tile.map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(s, "node {id} {} {kind} net={net} tile={tile}", n.name);
        }
        for (from, port, to) in self.links() {
            let _ = writeln!(s, "link {from}:{port} -> {}:{}", to.node, to.port);
        }
        if routes {
            for (id, n) in self.nodes.iter().enumerate() {
                for (dest, &r) in n.routes.iter().enumerate() {
                    if r != NO_ROUTE {
                        let _ = writeln!(s, "route {id} {dest} -> {r}");
                    }
                }
            }
        }
        s
    }
}

/// Incremental graph construction.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    in_used: Vec<Vec<bool>>,
    core_nodes: Vec<NodeId>,
    bank_nodes: Vec<NodeId>,
    num_cores: u32,
    num_banks: u32,
}

/// Handles to a butterfly inside a [`GraphBuilder`].
#[derive(Debug, Clone)]
pub struct Butterfly {
    pub ports: usize,
    pub radix: usize,
    /// `layers[l][s]` is switch `s` of layer `l`.
    pub layers: Vec<Vec<NodeId>>,
    /// Input line `i` enters here.
    pub inputs: Vec<PortRef>,
    /// Output line `i` leaves from this `(switch, output port)`.
    pub outputs: Vec<(NodeId, u16)>,
    pub net: Net,
}

impl Butterfly {
    fn layer_digit(&self, layer: usize) -> usize {
        self.layers.len() - 1 - layer
    }

    /// Fills the routing tables with destination-digit routing. `line_of`
    /// maps a destination to its output line, `None` when the destination is
    /// not served by this butterfly.
    pub fn set_routes<F>(&self, b: &mut GraphBuilder, line_of: F)
    where
        F: Fn(u32) -> Option<usize>,
    {
        let domain = b.domain(self.net);
        let r = self.radix;
        for (l, layer) in self.layers.iter().enumerate() {
            let pos = self.layer_digit(l);
            let stride = r.pow(pos as u32);
            for (s, &sw) in layer.iter().enumerate() {
                // switch index with the consumed digit removed; the digits
                // above `pos` are already fixed to the destination's
                let fixed_hi = s / stride;
                for dest in 0..domain {
                    let Some(line) = line_of(dest) else { continue };
                    if line / (stride * r) != fixed_hi {
                        continue;
                    }
                    let digit = (line / stride) % r;
                    b.set_route(sw, dest, digit as u16);
                }
            }
        }
    }
}

impl GraphBuilder {
    pub fn new(num_cores: u32, num_banks: u32) -> Self {
        let mut b = GraphBuilder {
            nodes: Vec::new(),
            in_used: Vec::new(),
            core_nodes: Vec::new(),
            bank_nodes: Vec::new(),
            num_cores,
            num_banks,
        };
        for c in 0..num_cores {
            let id = b.add_node(NodeKind::Core(c), None, None, format!("core{c}"), 1);
            b.core_nodes.push(id);
        }
        for k in 0..num_banks {
            let id = b.add_node(NodeKind::Bank(k), None, None, format!("bank{k}"), 1);
            b.bank_nodes.push(id);
        }
        b
    }

    fn domain(&self, net: Net) -> u32 {
        match net {
            Net::Request => self.num_banks,
            Net::Response => self.num_cores,
        }
    }

    pub fn core(&self, c: u32) -> NodeId {
        self.core_nodes[c as usize]
    }

    pub fn bank(&self, k: u32) -> NodeId {
        self.bank_nodes[k as usize]
    }

    pub fn set_tile(&mut self, id: NodeId, tile: u32) {
        self.nodes[id as usize].tile = Some(tile);
    }

    fn add_node(&mut self, kind: NodeKind, net: Option<Net>, tile: Option<u32>, name: String, outputs: usize) -> NodeId {
        let inputs = match kind {
            NodeKind::Switch { inputs, .. } => inputs as usize,
            _ => 1,
        };
        let routes = match (&kind, net) {
            (NodeKind::Switch { .. }, Some(net)) => vec![NO_ROUTE; self.domain(net) as usize],
            _ => Vec::new(),
        };
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            kind,
            net,
            tile,
            name,
            out: vec![None; outputs],
            routes,
            level: 0,
        });
        self.in_used.push(vec![false; inputs]);
        id
    }

    pub fn add_switch(&mut self, inputs: usize, outputs: usize, net: Net, tile: Option<u32>, name: impl Into<String>) -> NodeId {
        assert!(inputs > 0 && outputs > 0 && inputs < NO_ROUTE as usize && outputs < NO_ROUTE as usize);
        self.add_node(
            NodeKind::Switch {
                inputs: inputs as u16,
                outputs: outputs as u16,
            },
            Some(net),
            tile,
            name.into(),
            outputs,
        )
    }

    pub fn add_register(&mut self, capacity: u16, net: Net, tile: Option<u32>, name: impl Into<String>) -> NodeId {
        self.add_node(NodeKind::Register { capacity }, Some(net), tile, name.into(), 1)
    }

    pub fn connect(&mut self, from: NodeId, out_port: u16, to: NodeId, in_port: u16) {
        let slot = &mut self.nodes[from as usize].out[out_port as usize];
        assert!(slot.is_none(), "output {out_port} of {from} connected twice");
        *slot = Some(PortRef { node: to, port: in_port });
        let used = &mut self.in_used[to as usize][in_port as usize];
        assert!(!*used, "input {in_port} of {to} connected twice");
        *used = true;
    }

    pub fn connect_to(&mut self, from: NodeId, out_port: u16, to: PortRef) {
        self.connect(from, out_port, to.node, to.port)
    }

    pub fn set_route(&mut self, switch: NodeId, dest: u32, out_port: u16) {
        let node = &mut self.nodes[switch as usize];
        debug_assert!((out_port as usize) < node.out.len());
        node.routes[dest as usize] = out_port;
    }

    /// Route every destination accepted by `f` to the output it returns.
    pub fn set_routes_with<F>(&mut self, switch: NodeId, f: F)
    where
        F: Fn(u32) -> Option<u16>,
    {
        let net = self.nodes[switch as usize].net.expect("switch has a network");
        for dest in 0..self.domain(net) {
            if let Some(p) = f(dest) {
                self.set_route(switch, dest, p);
            }
        }
    }

    /// Adds a radix-`radix` butterfly with `ports` lines. With
    /// `pipeline_after = Some(k)` a row of registers is placed after the
    /// first `k` layers.
    pub fn add_butterfly(
        &mut self,
        ports: usize,
        radix: usize,
        pipeline_after: Option<usize>,
        buffer_depth: u16,
        net: Net,
        name: &str,
    ) -> Result<Butterfly> {
        if radix < 2 || !is_power_of(ports, radix) || ports < radix {
            return Err(Error::Config(format!(
                "butterfly ports ({ports}) must be a power of the radix ({radix})"
            )));
        }
        let num_layers = ilog(ports, radix);
        if let Some(k) = pipeline_after {
            if k == 0 || k >= num_layers {
                return Err(Error::Config(format!(
                    "pipeline after layer {k} is not inside a {num_layers}-layer butterfly"
                )));
            }
        }
        let per_layer = ports / radix;
        let layers: Vec<Vec<NodeId>> = (0..num_layers)
            .map(|l| {
                (0..per_layer)
                    .map(|s| self.add_switch(radix, radix, net, None, format!("{name}.l{l}.s{s}")))
                    .collect()
            })
            .collect();

        let digit_pos = |l: usize| num_layers - 1 - l;
        // (switch index, port) of `line` at a layer consuming digit `pos`
        let split = |line: usize, pos: usize| {
            let stride = radix.pow(pos as u32);
            let hi = line / (stride * radix);
            let lo = line % stride;
            (hi * stride + lo, (line / stride) % radix)
        };
        let join = |switch: usize, port: usize, pos: usize| {
            let stride = radix.pow(pos as u32);
            let hi = switch / stride;
            let lo = switch % stride;
            hi * stride * radix + port * stride + lo
        };

        let inputs = (0..ports)
            .map(|line| {
                let (s, p) = split(line, digit_pos(0));
                PortRef {
                    node: layers[0][s],
                    port: p as u16,
                }
            })
            .collect();

        for l in 0..num_layers - 1 {
            for s in 0..per_layer {
                for p in 0..radix {
                    let line = join(s, p, digit_pos(l));
                    let (ns, np) = split(line, digit_pos(l + 1));
                    let from = layers[l][s];
                    let to = layers[l + 1][ns];
                    if pipeline_after == Some(l + 1) {
                        let reg = self.add_register(buffer_depth, net, None, format!("{name}.pipe{line}"));
                        self.connect(from, p as u16, reg, 0);
                        self.connect(reg, 0, to, np as u16);
                    } else {
                        self.connect(from, p as u16, to, np as u16);
                    }
                }
            }
        }

        let last = num_layers - 1;
        let mut outputs = vec![(0, 0); ports];
        for s in 0..per_layer {
            for p in 0..radix {
                outputs[join(s, p, digit_pos(last))] = (layers[last][s], p as u16);
            }
        }

        Ok(Butterfly {
            ports,
            radix,
            layers,
            inputs,
            outputs,
            net,
        })
    }

    /// Validates connectivity and computes combinational levels.
    pub fn finish(self, cluster: Option<ClusterConfig>) -> Result<NetworkGraph> {
        let GraphBuilder {
            mut nodes,
            in_used,
            core_nodes,
            bank_nodes,
            ..
        } = self;

        for (id, n) in nodes.iter().enumerate() {
            if n.net.is_some() {
                if let Some(p) = n.out.iter().position(|o| o.is_none()) {
                    return Err(Error::Config(format!("{} (node {id}) output {p} is unconnected", n.name)));
                }
                if let Some(p) = in_used[id].iter().position(|u| !u) {
                    return Err(Error::Config(format!("{} (node {id}) input {p} is unconnected", n.name)));
                }
            }
            for to in n.out.iter().flatten() {
                let (a, b) = (n.net, nodes[to.node as usize].net);
                if let (Some(a), Some(b)) = (a, b) {
                    if a != b {
                        return Err(Error::Config(format!(
                            "link {} -> {} crosses networks",
                            n.name, nodes[to.node as usize].name
                        )));
                    }
                }
            }
        }

        // Kahn over switch -> switch links
        let mut indeg = vec![0u32; nodes.len()];
        for n in nodes.iter().filter(|n| n.is_switch()) {
            for to in n.out.iter().flatten() {
                if nodes[to.node as usize].is_switch() {
                    indeg[to.node as usize] += 1;
                }
            }
        }
        let mut frontier: Vec<usize> = (0..nodes.len())
            .filter(|&i| nodes[i].is_switch() && indeg[i] == 0)
            .collect();
        let mut visited = 0usize;
        let mut max_level = 0u16;
        while let Some(i) = frontier.pop() {
            visited += 1;
            let level = nodes[i].level;
            max_level = max_level.max(level);
            let outs: Vec<NodeId> = nodes[i].out.iter().flatten().map(|p| p.node).collect();
            for to in outs {
                let t = to as usize;
                if nodes[t].is_switch() {
                    nodes[t].level = nodes[t].level.max(level + 1);
                    indeg[t] -= 1;
                    if indeg[t] == 0 {
                        frontier.push(t);
                    }
                }
            }
        }
        let switches = nodes.iter().filter(|n| n.is_switch()).count();
        if visited != switches {
            return Err(Error::Config("combinational loop between switches".into()));
        }

        Ok(NetworkGraph {
            nodes,
            core_nodes,
            bank_nodes,
            cluster,
            max_level,
        })
    }
}

/// A standalone `m x n` crossbar between `m` master and `n` slave endpoints.
pub fn build_crossbar(spec: SwitchSpec) -> Result<NetworkGraph> {
    let spec = SwitchSpec::new(spec.num_masters, spec.num_slaves, spec.output_elastic)?;
    let mut b = GraphBuilder::new(spec.num_masters as u32, spec.num_slaves as u32);
    let sw = b.add_switch(spec.num_masters, spec.num_slaves, Net::Request, None, "xbar");
    for m in 0..spec.num_masters {
        let core = b.core(m as u32);
        b.connect(core, 0, sw, m as u16);
    }
    for n in 0..spec.num_slaves {
        let bank = b.bank(n as u32);
        if spec.output_elastic {
            let reg = b.add_register(DEFAULT_BUFFER_DEPTH, Net::Request, None, format!("xbar.eb{n}"));
            b.connect(sw, n as u16, reg, 0);
            b.connect(reg, 0, bank, 0);
        } else {
            b.connect(sw, n as u16, bank, 0);
        }
        b.set_route(sw, n as u32, n as u16);
    }
    b.finish(None)
}

/// A standalone radix-`radix` butterfly between `ports` masters and slaves.
pub fn build_butterfly(ports: usize, radix: usize, pipeline_after_layer: Option<usize>) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new(ports as u32, ports as u32);
    let bf = b.add_butterfly(ports, radix, pipeline_after_layer, DEFAULT_BUFFER_DEPTH, Net::Request, "bfly")?;
    for line in 0..ports {
        let core = b.core(line as u32);
        b.connect_to(core, 0, bf.inputs[line]);
        let (sw, p) = bf.outputs[line];
        let bank = b.bank(line as u32);
        b.connect(sw, p, bank, 0);
    }
    bf.set_routes(&mut b, |dest| Some(dest as usize));
    b.finish(None)
}

/// Builds the request and response networks of a full cluster.
pub fn build_cluster(cfg: &ClusterConfig) -> Result<NetworkGraph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new(cfg.num_cores(), cfg.num_banks());
    for c in 0..cfg.num_cores() {
        let id = b.core(c);
        b.set_tile(id, cfg.core_tile(c));
    }
    for k in 0..cfg.num_banks() {
        let id = b.bank(k);
        b.set_tile(id, cfg.bank_tile(k));
    }
    match cfg.variant {
        Variant::TopX => build_topx(&mut b, cfg),
        _ => build_tiled(&mut b, cfg)?,
    }
    b.finish(Some(*cfg))
}

fn build_topx(b: &mut GraphBuilder, cfg: &ClusterConfig) {
    let (nc, nb) = (cfg.num_cores() as usize, cfg.num_banks() as usize);
    let req = b.add_switch(nc, nb, Net::Request, None, "ideal.req");
    let resp = b.add_switch(nb, nc, Net::Response, None, "ideal.resp");
    for c in 0..nc {
        let core = b.core(c as u32);
        b.connect(core, 0, req, c as u16);
        b.connect(resp, c as u16, core, 0);
    }
    for k in 0..nb {
        let bank = b.bank(k as u32);
        b.connect(req, k as u16, bank, 0);
        b.connect(bank, 0, resp, k as u16);
    }
    b.set_routes_with(req, |k| Some(k as u16));
    b.set_routes_with(resp, |c| Some(c as u16));
}

/// Where a network hands traffic to a tile.
struct TilePorts {
    /// Per core: remote output of the address decoder.
    demux: Vec<NodeId>,
    /// Per tile: request crossbar, whose inputs `cores..cores+K` are remote.
    req_xbar: Vec<NodeId>,
    /// Per tile: response crossbar, whose outputs `cores..cores+K` are remote.
    resp_xbar: Vec<NodeId>,
    /// Per core: response merge, input 1 is the remote path.
    merge: Vec<NodeId>,
}

fn build_tiled(b: &mut GraphBuilder, cfg: &ClusterConfig) -> Result<()> {
    let tiles = cfg.tiles();
    let cpt = cfg.cores_per_tile;
    let bpt = cfg.banks_per_tile();
    let k = cfg.remote_ports();
    let depth = cfg.buffer_depth;
    let c = *cfg;

    let mut ports = TilePorts {
        demux: Vec::new(),
        req_xbar: Vec::new(),
        resp_xbar: Vec::new(),
        merge: Vec::new(),
    };

    for t in 0..tiles {
        let xbar = b.add_switch((cpt + k) as usize, bpt as usize, Net::Request, Some(t), format!("t{t}.req_xbar"));
        b.set_routes_with(xbar, |bank| (c.bank_tile(bank) == t).then_some((bank % bpt) as u16));
        for lb in 0..bpt {
            let bank = b.bank(t * bpt + lb);
            b.connect(xbar, lb as u16, bank, 0);
        }
        let rxbar = b.add_switch(bpt as usize, (cpt + k) as usize, Net::Response, Some(t), format!("t{t}.resp_xbar"));
        b.set_routes_with(rxbar, |core| Some(resp_port(&c, t, core) as u16));
        for lb in 0..bpt {
            let bank = b.bank(t * bpt + lb);
            b.connect(bank, 0, rxbar, lb as u16);
        }
        for lc in 0..cpt {
            let core_id = t * cpt + lc;
            let core = b.core(core_id);
            let demux = b.add_switch(1, 2, Net::Request, Some(t), format!("t{t}.c{lc}.decode"));
            b.set_routes_with(demux, |bank| Some(if c.bank_tile(bank) == t { 0 } else { 1 }));
            b.connect(core, 0, demux, 0);
            b.connect(demux, 0, xbar, lc as u16);
            let merge = b.add_switch(2, 1, Net::Response, Some(t), format!("t{t}.c{lc}.merge"));
            b.set_route(merge, core_id, 0);
            b.connect(rxbar, lc as u16, merge, 0);
            b.connect(merge, 0, core, 0);
            ports.demux.push(demux);
            ports.merge.push(merge);
        }
        ports.req_xbar.push(xbar);
        ports.resp_xbar.push(rxbar);
    }

    match cfg.variant {
        Variant::Top1 => build_top1(b, cfg, &ports, depth),
        Variant::Top4 => build_top4(b, cfg, &ports, depth),
        Variant::TopH => build_toph(b, cfg, &ports, depth),
        Variant::TopX => unreachable!(),
    }
}

/// Output of a tile response crossbar used for a response towards `core`.
fn resp_port(cfg: &ClusterConfig, tile: u32, core: u32) -> u32 {
    let cpt = cfg.cores_per_tile;
    let ct = cfg.core_tile(core);
    if ct == tile {
        return core % cpt;
    }
    match cfg.variant {
        Variant::Top1 => cpt,
        Variant::Top4 => cpt + core % cpt,
        Variant::TopH => cpt + (cfg.group(tile) + TOPH_GROUPS - cfg.group(ct)) % TOPH_GROUPS,
        Variant::TopX => unreachable!(),
    }
}

fn global_pipeline(tiles: u32) -> Option<usize> {
    let layers = ilog(tiles as usize, 4);
    Some(layers.div_ceil(2).clamp(1, layers - 1))
}

fn build_top1(b: &mut GraphBuilder, cfg: &ClusterConfig, ports: &TilePorts, depth: u16) -> Result<()> {
    let tiles = cfg.tiles();
    let cpt = cfg.cores_per_tile;
    let c = *cfg;
    let pipe = global_pipeline(tiles);
    let bf = b.add_butterfly(tiles as usize, 4, pipe, depth, Net::Request, "req_bfly")?;
    bf.set_routes(b, |bank| Some(c.bank_tile(bank) as usize));
    let rbf = b.add_butterfly(tiles as usize, 4, pipe, depth, Net::Response, "resp_bfly")?;
    rbf.set_routes(b, |core| Some(c.core_tile(core) as usize));

    for t in 0..tiles {
        let conc = b.add_switch(cpt as usize, 1, Net::Request, Some(t), format!("t{t}.concentrate"));
        b.set_routes_with(conc, |bank| (c.bank_tile(bank) != t).then_some(0));
        for lc in 0..cpt {
            b.connect(ports.demux[(t * cpt + lc) as usize], 1, conc, lc as u16);
        }
        let mreq = b.add_register(depth, Net::Request, Some(t), format!("t{t}.mreq"));
        b.connect(conc, 0, mreq, 0);
        b.connect_to(mreq, 0, bf.inputs[t as usize]);
        let (sw, p) = bf.outputs[t as usize];
        b.connect(sw, p, ports.req_xbar[t as usize], cpt as u16);

        b.connect_to(ports.resp_xbar[t as usize], cpt as u16, rbf.inputs[t as usize]);
        let mresp = b.add_register(depth, Net::Response, Some(t), format!("t{t}.mresp"));
        let (sw, p) = rbf.outputs[t as usize];
        b.connect(sw, p, mresp, 0);
        let dist = b.add_switch(1, cpt as usize, Net::Response, Some(t), format!("t{t}.distribute"));
        b.set_routes_with(dist, |core| (c.core_tile(core) == t).then_some((core % cpt) as u16));
        b.connect(mresp, 0, dist, 0);
        for lc in 0..cpt {
            b.connect(dist, lc as u16, ports.merge[(t * cpt + lc) as usize], 1);
        }
    }
    Ok(())
}

fn build_top4(b: &mut GraphBuilder, cfg: &ClusterConfig, ports: &TilePorts, depth: u16) -> Result<()> {
    let tiles = cfg.tiles();
    let cpt = cfg.cores_per_tile;
    let c = *cfg;
    let pipe = global_pipeline(tiles);
    for k in 0..cpt {
        let bf = b.add_butterfly(tiles as usize, 4, pipe, depth, Net::Request, &format!("req_bfly{k}"))?;
        bf.set_routes(b, |bank| Some(c.bank_tile(bank) as usize));
        let rbf = b.add_butterfly(tiles as usize, 4, pipe, depth, Net::Response, &format!("resp_bfly{k}"))?;
        rbf.set_routes(b, |core| (core % cpt == k).then_some(c.core_tile(core) as usize));
        for t in 0..tiles {
            let core = t * cpt + k;
            let mreq = b.add_register(depth, Net::Request, Some(t), format!("t{t}.mreq{k}"));
            b.connect(ports.demux[core as usize], 1, mreq, 0);
            b.connect_to(mreq, 0, bf.inputs[t as usize]);
            let (sw, p) = bf.outputs[t as usize];
            b.connect(sw, p, ports.req_xbar[t as usize], (cpt + k) as u16);

            b.connect_to(ports.resp_xbar[t as usize], (cpt + k) as u16, rbf.inputs[t as usize]);
            let mresp = b.add_register(depth, Net::Response, Some(t), format!("t{t}.mresp{k}"));
            let (sw, p) = rbf.outputs[t as usize];
            b.connect(sw, p, mresp, 0);
            b.connect(mresp, 0, ports.merge[core as usize], 1);
        }
    }
    Ok(())
}

/// Direction names of the TopH remote ports, indexed by group offset.
pub const TOPH_PORTS: [&str; 4] = ["L", "N", "NE", "E"];

fn build_toph(b: &mut GraphBuilder, cfg: &ClusterConfig, ports: &TilePorts, depth: u16) -> Result<()> {
    let tiles = cfg.tiles();
    let cpt = cfg.cores_per_tile;
    let tpg = cfg.tiles_per_group();
    let groups = TOPH_GROUPS;
    let c = *cfg;
    let offset = move |from: u32, to: u32| (c.group(to) + groups - c.group(from)) % groups;

    // per tile: master request/response registers, one per port
    let mut mreq = vec![[0 as NodeId; 4]; tiles as usize];
    let mut mresp = vec![[0 as NodeId; 4]; tiles as usize];
    for t in 0..tiles {
        let router = b.add_switch(cpt as usize, 4, Net::Request, Some(t), format!("t{t}.router"));
        b.set_routes_with(router, |bank| {
            let bt = c.bank_tile(bank);
            (bt != t).then(|| offset(t, bt) as u16)
        });
        for lc in 0..cpt {
            b.connect(ports.demux[(t * cpt + lc) as usize], 1, router, lc as u16);
        }
        let rrouter = b.add_switch(4, cpt as usize, Net::Response, Some(t), format!("t{t}.resp_router"));
        b.set_routes_with(rrouter, |core| (c.core_tile(core) == t).then_some((core % cpt) as u16));
        for lc in 0..cpt {
            b.connect(rrouter, lc as u16, ports.merge[(t * cpt + lc) as usize], 1);
        }
        for p in 0..4 {
            let name = TOPH_PORTS[p];
            let r = b.add_register(depth, Net::Request, Some(t), format!("t{t}.mreq.{name}"));
            b.connect(router, p as u16, r, 0);
            mreq[t as usize][p] = r;
            let r = b.add_register(depth, Net::Response, Some(t), format!("t{t}.mresp.{name}"));
            b.connect(r, 0, rrouter, p as u16);
            mresp[t as usize][p] = r;
        }
    }

    for g in 0..groups {
        let first = g * tpg;
        // local crossbars, combinational
        let lx = b.add_switch(tpg as usize, tpg as usize, Net::Request, None, format!("g{g}.local"));
        b.set_routes_with(lx, |bank| (c.group(c.bank_tile(bank)) == g).then(|| (c.bank_tile(bank) % tpg) as u16));
        let rlx = b.add_switch(tpg as usize, tpg as usize, Net::Response, None, format!("g{g}.resp_local"));
        b.set_routes_with(rlx, |core| (c.group(c.core_tile(core)) == g).then(|| (c.core_tile(core) % tpg) as u16));
        for j in 0..tpg {
            let t = first + j;
            b.connect(mreq[t as usize][0], 0, lx, j as u16);
            b.connect(lx, j as u16, ports.req_xbar[t as usize], cpt as u16);
            b.connect(ports.resp_xbar[t as usize], cpt as u16, rlx, j as u16);
            b.connect(rlx, j as u16, mresp[t as usize][0], 0);
        }

        for p in 1..4u32 {
            let name = TOPH_PORTS[p as usize];
            // requests from group g travel to group g + p
            let dst_group = (g + p) % groups;
            let bf = b.add_butterfly(tpg as usize, 4, None, depth, Net::Request, &format!("g{g}.{name}"))?;
            bf.set_routes(b, |bank| {
                let bt = c.bank_tile(bank);
                (c.group(bt) == dst_group).then_some((bt % tpg) as usize)
            });
            // responses from group g return to group g - p
            let back_group = (g + groups - p) % groups;
            let rbf = b.add_butterfly(tpg as usize, 4, None, depth, Net::Response, &format!("g{g}.resp_{name}"))?;
            rbf.set_routes(b, |core| {
                let ct = c.core_tile(core);
                (c.group(ct) == back_group).then_some((ct % tpg) as usize)
            });
            for j in 0..tpg {
                let t = first + j;
                let greq = b.add_register(depth, Net::Request, None, format!("g{g}.mif{j}.{name}"));
                b.connect(mreq[t as usize][p as usize], 0, greq, 0);
                b.connect_to(greq, 0, bf.inputs[j as usize]);
                let dst_tile = dst_group * tpg + j;
                let (sw, o) = bf.outputs[j as usize];
                b.connect(sw, o, ports.req_xbar[dst_tile as usize], (cpt + p) as u16);

                b.connect_to(ports.resp_xbar[t as usize], (cpt + p) as u16, rbf.inputs[j as usize]);
                let back_tile = back_group * tpg + j;
                let gresp = b.add_register(depth, Net::Response, None, format!("g{back_group}.mif{j}.resp_{name}"));
                let (sw, o) = rbf.outputs[j as usize];
                b.connect(sw, o, gresp, 0);
                b.connect(gresp, 0, mresp[back_tile as usize][p as usize], 0);
            }
        }
    }
    Ok(())
}
