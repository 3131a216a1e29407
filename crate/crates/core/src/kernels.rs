//! Trace-driven benchmark kernels.
//!
//! Each kernel is reduced to per-core streams of loads, stores and compute
//! gaps. A core executes at most one trace entry per cycle, in order. A
//! memory operation issues only once the previous one has entered the
//! network, and a load additionally waits while the core already has `W`
//! loads pending. `G n` idles the core for `n` cycles.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::addressing::{AddressLayout, PhysicalLocation};
use crate::engine::{AccessKind, SimState, Workload, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::topology::{ClusterConfig, NetworkGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Matmul,
    Conv2d,
    Dct,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Matmul, KernelKind::Conv2d, KernelKind::Dct];

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Matmul => "matmul",
            KernelKind::Conv2d => "conv2d",
            KernelKind::Dct => "dct",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown kernel '{s}' (expected matmul, conv2d or dct)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub scramble: bool,
    /// Idle cycles after every memory operation.
    pub compute_gap: u32,
    /// Square operand size.
    pub matmul_n: u32,
    pub matmul_a: u32,
    pub matmul_b: u32,
    pub matmul_c: u32,
    /// Image rows; split evenly over tiles, then over the tile's cores.
    pub conv_rows: u32,
    pub conv_cols: u32,
    pub dct_blocks_per_core: u32,
}

impl KernelConfig {
    pub fn new(kind: KernelKind) -> Self {
        KernelConfig {
            kind,
            scramble: true,
            compute_gap: 1,
            matmul_n: 64,
            matmul_a: 0x1_0000,
            matmul_b: 0x1_4000,
            matmul_c: 0x1_8000,
            conv_rows: 512,
            conv_cols: 16,
            dct_blocks_per_core: 2,
        }
    }

    pub fn with_scramble(mut self, on: bool) -> Self {
        self.scramble = on;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Load(u32),
    Store(u32),
    Gap(u32),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoreTrace {
    pub ops: Vec<Op>,
}

impl CoreTrace {
    fn mem(&mut self, op: Op, gap: u32) {
        self.ops.push(op);
        if gap > 0 {
            self.ops.push(Op::Gap(gap));
        }
    }

    pub fn loads(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, Op::Load(_))).count()
    }

    pub fn stores(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, Op::Store(_))).count()
    }

    pub fn addresses(&self) -> impl Iterator<Item = u32> + '_ {
        self.ops.iter().filter_map(|o| match *o {
            Op::Load(a) | Op::Store(a) => Some(a),
            Op::Gap(_) => None,
        })
    }

    pub fn stack_accesses(&self, range: std::ops::Range<u32>) -> usize {
        self.addresses().filter(|a| range.contains(a)).count()
    }
}

/// Generates the traces of every core of `cluster`.
pub fn generate(cfg: &KernelConfig, cluster: &ClusterConfig) -> Result<Vec<CoreTrace>> {
    match cfg.kind {
        KernelKind::Matmul => gen_matmul(cfg, cluster),
        KernelKind::Conv2d => gen_conv2d(cfg, cluster),
        KernelKind::Dct => gen_dct(cfg, cluster),
    }
}

fn check_span(layout: &AddressLayout, base: u32, words: u32, what: &str) -> Result<()> {
    let end = base as u64 + 4 * words as u64;
    if base % 4 != 0 || end > layout.total_bytes() as u64 {
        return Err(Error::Config(format!("{what} at {base:#x} does not fit in L1")));
    }
    if base < layout.seq_window_bytes() {
        return Err(Error::Config(format!("{what} at {base:#x} overlaps the sequential window")));
    }
    Ok(())
}

/// `C = A * B` on `n x n` row-major word matrices. Core `c` owns a strip of
/// `n*n / cores` consecutive outputs of one row.
///
/// Both loops are skewed per core. Without the skew every core reads the
/// same B row at the same step and the crossbar serializes on a few banks.
pub fn gen_matmul(cfg: &KernelConfig, cluster: &ClusterConfig) -> Result<Vec<CoreTrace>> {
    let n = cfg.matmul_n;
    let cores = cluster.num_cores();
    if n == 0 || n * n < cores || (n * n) % cores != 0 || n % ((n * n) / cores) != 0 {
        return Err(Error::Config(format!(
            "{n}x{n} outputs cannot be split into equal row strips over {cores} cores"
        )));
    }
    let layout = &cluster.layout;
    for (base, what) in [(cfg.matmul_a, "A"), (cfg.matmul_b, "B"), (cfg.matmul_c, "C")] {
        check_span(layout, base, n * n, what)?;
    }
    let strip = n * n / cores;
    let g = cfg.compute_gap;
    Ok((0..cores)
        .map(|c| {
            let i = c * strip / n;
            let j0 = c * strip % n;
            let k0 = i + j0;
            let j_skew = i + (i / 16) * 4;
            let mut t = CoreTrace::default();
            for jj in 0..strip {
                let j = j0 + (jj + j_skew) % strip;
                for kk in 0..n {
                    let k = (kk + k0) % n;
                    t.mem(Op::Load(cfg.matmul_a + 4 * (i * n + k)), g);
                    t.mem(Op::Load(cfg.matmul_b + 4 * (k * n + j)), g);
                }
                t.mem(Op::Store(cfg.matmul_c + 4 * (i * n + j)), g);
            }
            t
        })
        .collect())
}

/// 3x3 convolution over a `rows x cols` image with wrap-around borders.
/// Tile `t` holds image rows `[t*R, (t+1)*R)` and the matching output rows in
/// its sequential region; each of its cores computes `R / cores_per_tile`
/// consecutive rows.
pub fn gen_conv2d(cfg: &KernelConfig, cluster: &ClusterConfig) -> Result<Vec<CoreTrace>> {
    let layout = &cluster.layout;
    let tiles = cluster.tiles();
    let cpt = cluster.cores_per_tile;
    let (rows, cols) = (cfg.conv_rows, cfg.conv_cols);
    if rows % tiles != 0 || rows / tiles < cpt || (rows / tiles) % cpt != 0 || cols < 3 {
        return Err(Error::Config(format!(
            "{rows}x{cols} image does not partition into {tiles} tiles of {cpt} cores"
        )));
    }
    let r_tile = rows / tiles;
    let region_words = layout.seq_region_bytes() / 4;
    if 2 * r_tile * cols > region_words {
        return Err(Error::Config(format!(
            "{r_tile} input and output rows of {cols} words exceed the {region_words}-word sequential region"
        )));
    }
    let input = |r: u32, col: u32| -> Result<u32> {
        let tile = r / r_tile;
        Ok(layout.sequential_base(tile)? + 4 * ((r % r_tile) * cols + col))
    };
    let output = |r: u32, col: u32| -> Result<u32> {
        let tile = r / r_tile;
        Ok(layout.sequential_base(tile)? + 4 * ((r_tile + r % r_tile) * cols + col))
    };
    let per_core = r_tile / cpt;
    let g = cfg.compute_gap;
    (0..cluster.num_cores())
        .map(|c| {
            let mut t = CoreTrace::default();
            let r0 = c * per_core;
            for r in r0..r0 + per_core {
                for col in 0..cols {
                    for dr in [rows - 1, 0, 1] {
                        for dc in [cols - 1, 0, 1] {
                            t.mem(Op::Load(input((r + dr) % rows, (col + dc) % cols)?), g);
                        }
                    }
                    t.mem(Op::Store(output(r, col)?), g);
                }
            }
            Ok(t)
        })
        .collect()
}

/// Bytes of stack per core used by the 8x8 intermediate block.
pub const DCT_STACK_BYTES: u32 = 64 * 4;

/// Row-local word `w` of `tile` in interleaved memory, starting at bank row
/// `row_base` (above the sequential window).
fn tile_word(layout: &AddressLayout, tile: u32, row_base: u32, w: u32) -> Result<u32> {
    let b = layout.banks_per_tile();
    layout.encode_interleaved(PhysicalLocation {
        tile,
        bank: w % b,
        row: row_base + w / b,
    })
}

/// First stack byte of `core`.
pub fn dct_stack_base(layout: &AddressLayout, cluster: &ClusterConfig, core: u32) -> Result<u32> {
    let tile = cluster.core_tile(core);
    Ok(layout.sequential_base(tile)? + DCT_STACK_BYTES * (core % cluster.cores_per_tile))
}

/// 2D DCT on 8x8 blocks: a row pass into an on-stack intermediate block, then
/// a column pass into the output. Input and output blocks live in the core's
/// tile; the stack sits in the tile's sequential region, so its placement
/// depends on whether scrambling is enabled.
pub fn gen_dct(cfg: &KernelConfig, cluster: &ClusterConfig) -> Result<Vec<CoreTrace>> {
    let layout = &cluster.layout;
    let cpt = cluster.cores_per_tile;
    if cfg.dct_blocks_per_core == 0 {
        return Err(Error::Config("dct needs at least one block per core".into()));
    }
    if DCT_STACK_BYTES * cpt > layout.seq_region_bytes() {
        return Err(Error::Config(format!(
            "{cpt} stacks of {DCT_STACK_BYTES} bytes overflow the {}-byte sequential region",
            layout.seq_region_bytes()
        )));
    }
    let b = layout.banks_per_tile();
    let words_per_tile = cpt * cfg.dct_blocks_per_core * 64;
    let rows_needed = words_per_tile.div_ceil(b);
    let in_row = layout.seq_window_bytes() / (4 * layout.num_banks());
    let out_row = in_row + rows_needed;
    if out_row + rows_needed > layout.rows_per_bank() {
        return Err(Error::Config(format!(
            "{} blocks per core do not fit in the tile's banks",
            cfg.dct_blocks_per_core
        )));
    }
    let g = cfg.compute_gap;
    (0..cluster.num_cores())
        .map(|c| {
            let tile = cluster.core_tile(c);
            let lc = c % cpt;
            let stack = dct_stack_base(layout, cluster, c)?;
            let mut t = CoreTrace::default();
            for blk in 0..cfg.dct_blocks_per_core {
                let first = (lc * cfg.dct_blocks_per_core + blk) * 64;
                // rotate the element order per core to spread bank accesses
                let e = |i: u32| (i + 2 * lc) % 8;
                // rotate the row and column order per tile so tiles do not hit
                // the same stack rows in lockstep
                for rr in 0..8 {
                    let r = (rr + tile) % 8;
                    for i in 0..8 {
                        t.mem(Op::Load(tile_word(layout, tile, in_row, first + r * 8 + e(i))?), g);
                    }
                    for i in 0..8 {
                        t.mem(Op::Store(stack + 4 * (r * 8 + e(i))), g);
                    }
                }
                for cc in 0..8 {
                    let col = (cc + tile) % 8;
                    for i in 0..8 {
                        t.mem(Op::Load(stack + 4 * (e(i) * 8 + col)), g);
                    }
                    for i in 0..8 {
                        t.mem(Op::Store(tile_word(layout, tile, out_row, first + e(i) * 8 + col)?), g);
                    }
                }
            }
            Ok(t)
        })
        .collect()
}

/// Writes traces as `core <id>` headers followed by `L <hex>` / `S <hex>` /
/// `G <n>` lines.
pub fn write_traces<W: Write>(mut out: W, traces: &[CoreTrace]) -> Result<()> {
    for (c, t) in traces.iter().enumerate() {
        writeln!(out, "core {c}")?;
        for op in &t.ops {
            match op {
                Op::Load(a) => writeln!(out, "L {a:x}")?,
                Op::Store(a) => writeln!(out, "S {a:x}")?,
                Op::Gap(n) => writeln!(out, "G {n}")?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Parses the format of [`write_traces`]. Lines before the first header
/// belong to core 0; blank lines and `#` comments are ignored.
pub fn read_traces<R: BufRead>(input: R, cores: u32) -> Result<Vec<CoreTrace>> {
    let mut traces = vec![CoreTrace::default(); cores as usize];
    let mut cur = 0usize;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |msg: String| Error::TraceParse { line: lineno, msg };
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let mut parts = text.split_whitespace();
        let tag = parts.next().unwrap_or("");
        let arg = parts.next().ok_or_else(|| err(format!("'{tag}' needs an argument")))?;
        if parts.next().is_some() {
            return Err(err("trailing tokens".into()));
        }
        let hex = |s: &str| {
            u32::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|e| err(format!("bad address '{s}': {e}")))
        };
        let op = match tag {
            "core" => {
                let c: u32 = arg.parse().map_err(|e| err(format!("bad core id '{arg}': {e}")))?;
                if c >= cores {
                    return Err(err(format!("core {c} outside a {cores}-core cluster")));
                }
                cur = c as usize;
                continue;
            }
            "L" => Op::Load(hex(arg)?),
            "S" => Op::Store(hex(arg)?),
            "G" => Op::Gap(arg.parse().map_err(|e| err(format!("bad gap '{arg}': {e}")))?),
            _ => return Err(err(format!("unknown entry '{tag}'"))),
        };
        traces[cur].ops.push(op);
    }
    Ok(traces)
}

/// Closed-loop driver for a set of traces.
#[derive(Debug, Clone)]
pub struct KernelWorkload {
    traces: Vec<CoreTrace>,
    layout: AddressLayout,
    scramble: bool,
    cursor: Vec<usize>,
    stall: Vec<u32>,
    window: u32,
}

impl KernelWorkload {
    pub fn new(traces: Vec<CoreTrace>, graph: &NetworkGraph, scramble: bool, window: u32) -> Result<Self> {
        let cluster = graph
            .cluster
            .ok_or_else(|| Error::Config("kernels need a cluster graph".into()))?;
        if traces.len() != graph.num_cores() as usize {
            return Err(Error::Config(format!(
                "{} traces for {} cores",
                traces.len(),
                graph.num_cores()
            )));
        }
        if window == 0 {
            return Err(Error::Config("outstanding window must be positive".into()));
        }
        let layout = cluster.layout;
        for (c, t) in traces.iter().enumerate() {
            for a in t.addresses() {
                if a % 4 != 0 {
                    return Err(Error::Config(format!("core {c}: unaligned address {a:#x}")));
                }
                layout.decode(a, scramble)?;
            }
        }
        let n = traces.len();
        Ok(KernelWorkload {
            traces,
            layout,
            scramble,
            cursor: vec![0; n],
            stall: vec![0; n],
            window,
        })
    }
}

impl Workload for KernelWorkload {
    fn drive(&mut self, graph: &NetworkGraph, state: &mut SimState) -> Result<()> {
        for c in 0..self.traces.len() {
            if self.stall[c] > 0 {
                self.stall[c] -= 1;
                continue;
            }
            let Some(&op) = self.traces[c].ops.get(self.cursor[c]) else { continue };
            let core = c as u32;
            let (kind, addr) = match op {
                Op::Gap(n) => {
                    self.stall[c] = n.saturating_sub(1);
                    self.cursor[c] += 1;
                    continue;
                }
                Op::Load(a) => (AccessKind::Load, a),
                Op::Store(a) => (AccessKind::Store, a),
            };
            if state.source_queue_len(graph, core) > 0 {
                continue;
            }
            if kind == AccessKind::Load && state.pending_loads(graph, core) >= self.window {
                continue;
            }
            let target = self.layout.decode(addr, self.scramble)?;
            state.enqueue(graph, core, kind, addr, target, self.layout.global_bank(target))?;
            self.cursor[c] += 1;
        }
        Ok(())
    }

    fn exhausted(&self) -> bool {
        self.cursor.iter().zip(&self.traces).all(|(&i, t)| i >= t.ops.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelResult {
    pub cycles: u64,
    pub loads: u64,
    pub stores: u64,
}

/// Runs traces to completion: every trace consumed and the network drained.
pub fn run_kernel(graph: &NetworkGraph, traces: Vec<CoreTrace>, scramble: bool, window: u32) -> Result<KernelResult> {
    let loads = traces.iter().map(|t| t.loads() as u64).sum();
    let stores = traces.iter().map(|t| t.stores() as u64).sum();
    let ops: u64 = traces
        .iter()
        .map(|t| {
            t.ops
                .iter()
                .map(|o| match o {
                    Op::Gap(n) => *n as u64,
                    _ => 1,
                })
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0);
    let mut wl = KernelWorkload::new(traces, graph, scramble, window)?;
    let mut state = SimState::new(graph, window);
    // every access resolves in bounded time, so a hang means a model bug
    let limit = 1000 * (ops + loads + stores + 1);
    while !(wl.exhausted() && state.is_idle()) {
        if state.cycle() > limit {
            return Err(Error::Fault {
                cycle: state.cycle(),
                msg: "kernel did not finish".into(),
            });
        }
        wl.drive(graph, &mut state)?;
        state.step(graph)?;
        state.drain_completions().for_each(drop);
    }
    Ok(KernelResult {
        cycles: state.cycle(),
        loads,
        stores,
    })
}

/// Generates and runs `cfg` on `graph` with the default window.
pub fn run_config(graph: &NetworkGraph, cfg: &KernelConfig) -> Result<KernelResult> {
    let cluster = graph
        .cluster
        .ok_or_else(|| Error::Config("kernels need a cluster graph".into()))?;
    let traces = generate(cfg, &cluster)?;
    run_kernel(graph, traces, cfg.scramble, DEFAULT_WINDOW)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_cluster, Variant};
    use std::collections::HashSet;

    fn cluster() -> ClusterConfig {
        ClusterConfig::new(Variant::TopH)
    }

    fn tiles_of(t: &CoreTrace, layout: &AddressLayout, scramble: bool, loads_only: bool) -> Vec<u32> {
        t.ops
            .iter()
            .filter_map(|o| match *o {
                Op::Load(a) => Some(a),
                Op::Store(a) if !loads_only => Some(a),
                _ => None,
            })
            .map(|a| layout.decode(a, scramble).unwrap().tile)
            .collect()
    }

    #[test]
    fn matmul_counts_and_spread() {
        let cl = cluster();
        let cfg = KernelConfig::new(KernelKind::Matmul);
        let tr = gen_matmul(&cfg, &cl).unwrap();
        assert_eq!(tr.iter().map(|t| t.loads()).sum::<usize>(), 2 * 64 * 64 * 64);
        assert_eq!(tr.iter().map(|t| t.stores()).sum::<usize>(), 64 * 64);
        // every output stored exactly once
        let stores: HashSet<u32> = tr
            .iter()
            .flat_map(|t| t.ops.iter().filter_map(|o| if let Op::Store(a) = o { Some(*a) } else { None }))
            .collect();
        assert_eq!(stores.len(), 64 * 64);
        let off = gen_matmul(&cfg.with_scramble(false), &cl).unwrap();
        assert_eq!(tr, off);

        let layout = cl.layout;
        let mut hist = vec![0u64; 64];
        let (mut remote, mut total) = (0u64, 0u64);
        for (c, t) in tr.iter().enumerate() {
            for tile in tiles_of(t, &layout, true, true) {
                hist[tile as usize] += 1;
                total += 1;
                remote += (tile != cl.core_tile(c as u32)) as u64;
            }
        }
        let mean = total as f64 / 64.0;
        assert!(hist.iter().all(|&h| (h as f64 - mean).abs() < 0.05 * mean), "{hist:?}");
        assert!(remote as f64 / total as f64 > 0.9);
    }

    #[test]
    fn matmul_rejects_bad_dims() {
        let mut cfg = KernelConfig::new(KernelKind::Matmul);
        cfg.matmul_n = 60;
        assert!(gen_matmul(&cfg, &cluster()).is_err());
        cfg.matmul_n = 64;
        cfg.matmul_a = 0x100;
        assert!(gen_matmul(&cfg, &cluster()).is_err());
    }

    #[test]
    fn conv2d_locality() {
        let cl = cluster();
        let layout = cl.layout;
        let cfg = KernelConfig::new(KernelKind::Conv2d);
        let tr = gen_conv2d(&cfg, &cl).unwrap();
        let pixels = (cfg.conv_rows * cfg.conv_cols) as usize;
        assert_eq!(tr.iter().map(|t| t.loads()).sum::<usize>(), 9 * pixels);
        assert_eq!(tr.iter().map(|t| t.stores()).sum::<usize>(), pixels);
        let (mut local, mut total) = (0, 0);
        let r_tile = cfg.conv_rows / cl.tiles();
        for (c, t) in tr.iter().enumerate() {
            let own = cl.core_tile(c as u32);
            let tiles = tiles_of(t, &layout, true, false);
            local += tiles.iter().filter(|&&x| x == own).count();
            total += tiles.len();
            // each pixel: 9 loads then a store
            for (p, px) in tiles.chunks(10).enumerate() {
                let row = c as u32 * (r_tile / cl.cores_per_tile) + p as u32 / cfg.conv_cols;
                let set: HashSet<u32> = px[..9].iter().copied().collect();
                let boundary = row % r_tile == 0 || row % r_tile == r_tile - 1;
                assert_eq!(set.len(), if boundary { 2 } else { 1 }, "core {c} pixel {p}");
                assert!(set.contains(&own));
                assert_eq!(px[9], own);
            }
        }
        assert!(local as f64 / total as f64 > 0.9);
    }

    #[test]
    fn conv2d_rejects_small_images() {
        let mut cfg = KernelConfig::new(KernelKind::Conv2d);
        cfg.conv_rows = 128;
        assert!(gen_conv2d(&cfg, &cluster()).is_err());
        cfg.conv_rows = 512;
        cfg.conv_cols = 32;
        assert!(gen_conv2d(&cfg, &cluster()).is_err());
    }

    #[test]
    fn dct_counts_and_stack_placement() {
        let cl = cluster();
        let layout = cl.layout;
        let cfg = KernelConfig::new(KernelKind::Dct);
        let tr = gen_dct(&cfg, &cl).unwrap();
        for (c, t) in tr.iter().enumerate() {
            let c = c as u32;
            let n = t.loads() + t.stores();
            assert_eq!(n, 256 * cfg.dct_blocks_per_core as usize);
            let base = dct_stack_base(&layout, &cl, c).unwrap();
            let stack = base..base + DCT_STACK_BYTES;
            assert_eq!(t.stack_accesses(stack.clone()), 128 * cfg.dct_blocks_per_core as usize);
            let own = cl.core_tile(c);
            let on = tiles_of(t, &layout, true, false);
            assert!(on.iter().all(|&x| x == own));
            let off_stack: HashSet<u32> = t
                .addresses()
                .filter(|a| stack.contains(a))
                .map(|a| layout.decode(a, false).unwrap().tile)
                .collect();
            assert!(!off_stack.is_empty() && !off_stack.iter().all(|&x| x == own));
        }
        // without scrambling the stacks spread over every tile
        let all: HashSet<u32> = (0..cl.num_cores())
            .flat_map(|c| {
                let base = dct_stack_base(&layout, &cl, c).unwrap();
                (base..base + DCT_STACK_BYTES).step_by(4)
            })
            .map(|a| layout.decode(a, false).unwrap().tile)
            .collect();
        assert_eq!(all.len(), 64);
    }

    #[test]
    fn dct_rejects_overflow() {
        let layout = AddressLayout::default().with_seq_row_bits(1).unwrap();
        let cl = cluster().with_layout(layout);
        assert!(gen_dct(&KernelConfig::new(KernelKind::Dct), &cl).is_err());
        let mut cfg = KernelConfig::new(KernelKind::Dct);
        cfg.dct_blocks_per_core = 1000;
        assert!(gen_dct(&cfg, &cluster()).is_err());
    }

    #[test]
    fn traces_are_deterministic_and_roundtrip() {
        let cl = cluster();
        for kind in KernelKind::ALL {
            let cfg = KernelConfig::new(kind);
            let a = generate(&cfg, &cl).unwrap();
            assert_eq!(a, generate(&cfg, &cl).unwrap());
            let mut buf = Vec::new();
            write_traces(&mut buf, &a).unwrap();
            let b = read_traces(&buf[..], cl.num_cores()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn trace_parse_errors() {
        let bad = ["X 10", "L", "L zz", "core 999", "G -1", "L 4 5"];
        for (i, text) in bad.iter().enumerate() {
            let r = read_traces(text.as_bytes(), 4);
            assert!(matches!(r, Err(Error::TraceParse { line: 1, .. })), "case {i}: {r:?}");
        }
        let ok = read_traces("# hdr\nL 0x10\n\ncore 2\nS 20 # c\nG 3\n".as_bytes(), 4).unwrap();
        assert_eq!(ok[0].ops, vec![Op::Load(0x10)]);
        assert_eq!(ok[2].ops, vec![Op::Store(0x20), Op::Gap(3)]);
    }

    #[test]
    fn pipelined_local_loads() {
        // n back-to-back local loads on the ideal crossbar take about n cycles
        let g = build_cluster(&ClusterConfig::new(Variant::TopX)).unwrap();
        let n = 100;
        let mut traces = vec![CoreTrace::default(); 256];
        traces[0].ops = (0..n).map(|i| Op::Load(4 * (i % 16))).collect();
        let r = run_kernel(&g, traces, false, 2).unwrap();
        assert_eq!(r.loads, n as u64);
        assert!((n as u64..=n as u64 + 2).contains(&r.cycles), "{}", r.cycles);
    }

    #[test]
    fn gaps_and_window_pace_a_core() {
        let g = build_cluster(&ClusterConfig::new(Variant::TopH)).unwrap();
        let mut traces = vec![CoreTrace::default(); 256];
        traces[0].ops = vec![Op::Gap(5), Op::Load(0)];
        // idle 0..5, issue at 5, response at 6
        assert_eq!(run_kernel(&g, traces.clone(), false, 1).unwrap().cycles, 7);
        // W=1: a remote load (5 cycles) frees the window for the next cycle
        let remote = 4 * 16 * 40; // tile 40, another group
        traces[0].ops = vec![Op::Load(remote); 4];
        assert_eq!(run_kernel(&g, traces, false, 1).unwrap().cycles, 4 * 6);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("DCT".parse::<KernelKind>().unwrap(), KernelKind::Dct);
        assert!("fft".parse::<KernelKind>().is_err());
    }
}
