//! Experiment runner behind the `l1net` binary.
//!
//! Every option can come from a flag, from a flat `key = value` config file
//! (`--config`) or from the built-in default, in that order of precedence.
//! Config keys are the long flag names without the leading dashes, e.g.
//! `variant = top1,toph` or `lambda = 0:0.5:0.01`. Lines starting with `#`
//! are comments.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::addressing::{check_scrambling, AddressLayout, PhysicalLocation, ScrambleReport, ScrambleViolation};
use crate::engine::{AccessKind, RunConfig, SimState, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelConfig, KernelKind, KernelResult};
use crate::metrics::{self, SweepConfig, SweepRow};
use crate::topology::{build_cluster, ClusterConfig, LatencyClass, NetworkGraph, Variant, DEFAULT_BUFFER_DEPTH};

/// Exit code of a run whose check found a deviation.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code of an invalid invocation.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "l1net", version, about = "Cycle-accurate shared-L1 cluster interconnect simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep injected load and write throughput/latency CSV.
    Sweep(Options),
    /// Run benchmark kernels and write completion cycles relative to TopX.
    Kernel(Options),
    /// Print the zero-load latency table and check it against the expected one.
    ZeroLoad(Options),
    /// Exhaustively check the hybrid address scrambling.
    ScrambleCheck(Options),
}

/// Raw options. Values stay textual so flags and config entries share one parser.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Flat key = value file with defaults for any option below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated variants (top1, top4, toph, topx).
    #[arg(long)]
    pub variant: Option<String>,
    /// Injected load grid as start:stop:step.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Comma-separated local-region probabilities; omit for uniform traffic.
    #[arg(long = "p-local")]
    pub p_local: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Repetitions per sweep point.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Simulated cycles per sweep point.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Warm-up cycles; defaults to a fifth of the horizon.
    #[arg(long)]
    pub warmup: Option<String>,
    /// on, off or both (kernels only).
    #[arg(long)]
    pub scramble: Option<String>,
    /// Row bits per sequential region.
    #[arg(long = "s-bits")]
    pub s_bits: Option<String>,
    /// Bank-select bits per tile.
    #[arg(long = "b-bits")]
    pub b_bits: Option<String>,
    /// Tile-select bits.
    #[arg(long = "t-bits")]
    pub t_bits: Option<String>,
    /// Comma-separated kernels (matmul, conv2d, dct).
    #[arg(long)]
    pub kernel: Option<String>,
    /// Idle cycles after every kernel memory operation.
    #[arg(long = "compute-gap")]
    pub compute_gap: Option<String>,
    /// Outstanding-load window per core.
    #[arg(long)]
    pub window: Option<String>,
    /// Elastic buffer depth at register boundaries.
    #[arg(long = "buffer-depth")]
    pub buffer_depth: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long)]
    pub parallel: Option<String>,
    /// Writes the generated kernel traces to this path.
    #[arg(long = "trace-out")]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Sweep,
    Kernel,
    ZeroLoad,
    ScrambleCheck,
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: CommandKind,
    pub variants: Vec<Variant>,
    pub lambdas: Vec<f64>,
    /// Empty selects uniform traffic over the interleaved map.
    pub p_local: Vec<f64>,
    pub seed: u64,
    pub seeds: u32,
    pub horizon: u64,
    pub warmup: u64,
    pub scramble: Vec<bool>,
    pub layout: AddressLayout,
    pub buffer_depth: u16,
    pub kernels: Vec<KernelKind>,
    pub compute_gap: u32,
    pub window: u32,
    pub out: PathBuf,
    pub parallel: usize,
    pub trace_out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn cluster(&self, variant: Variant) -> ClusterConfig {
        let mut c = ClusterConfig::new(variant).with_layout(self.layout);
        c.buffer_depth = self.buffer_depth;
        c
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            horizon: self.horizon,
            warmup: self.warmup,
            window: self.window,
            check_invariants: false,
        }
    }

    pub fn kernel_config(&self, kind: KernelKind, scramble: bool) -> KernelConfig {
        let mut k = KernelConfig::new(kind).with_scramble(scramble);
        k.compute_gap = self.compute_gap;
        k
    }
}

const KEYS: [&str; 18] = [
    "variant",
    "lambda",
    "p-local",
    "seed",
    "seeds",
    "horizon",
    "warmup",
    "scramble",
    "s-bits",
    "b-bits",
    "t-bits",
    "kernel",
    "compute-gap",
    "window",
    "buffer-depth",
    "out",
    "parallel",
    "trace-out",
];

/// Parses a flat `key = value` config text.
pub fn parse_config(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("config line {}: unknown key '{}'", i + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

struct Sources<'a> {
    flags: HashMap<&'static str, Option<String>>,
    config: &'a HashMap<String, String>,
}

impl Sources<'_> {
    fn raw(&self, key: &'static str) -> Option<String> {
        self.flags
            .get(key)
            .cloned()
            .flatten()
            .or_else(|| self.config.get(key).cloned())
    }

    fn get<T: FromStr>(&self, key: &'static str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("--{key} '{s}': {}", bare(&e)))),
        }
    }
}

// drops the prefix of nested config errors
fn bare(e: &dyn std::fmt::Display) -> String {
    let s = e.to_string();
    s.strip_prefix("configuration error: ").map(str::to_string).unwrap_or(s)
}

fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|e| Error::Config(format!("--{key} '{x}': {}", bare(&e)))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("--{key} is empty")));
    }
    Ok(items)
}

fn parse_lambda(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("--lambda '{s}': {e}")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [a, b, c] => metrics::lambda_grid(num(a)?, num(b)?, num(c)?),
        _ => Err(Error::Config(format!("--lambda '{s}': expected start:stop:step"))),
    }
}

fn parse_scramble(s: &str) -> Result<Vec<bool>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "1" => Ok(vec![true]),
        "off" | "false" | "0" => Ok(vec![false]),
        "both" => Ok(vec![false, true]),
        other => Err(Error::Config(format!("--scramble '{other}': expected on, off or both"))),
    }
}

fn default_variants(command: CommandKind) -> Vec<Variant> {
    match command {
        CommandKind::Sweep | CommandKind::Kernel => vec![Variant::Top1, Variant::Top4, Variant::TopH],
        CommandKind::ZeroLoad | CommandKind::ScrambleCheck => Variant::ALL.to_vec(),
    }
}

/// Resolves flags, config file and defaults into a validated spec. Nothing
/// runs before this succeeds.
pub fn resolve(command: CommandKind, opts: &Options) -> Result<ExperimentSpec> {
    let config = match &opts.config {
        None => HashMap::new(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::from(e).context(format!("config {}", p.display())))?;
            parse_config(&text)?
        }
    };
    let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    let flags: HashMap<&'static str, Option<String>> = [
        ("variant", opts.variant.clone()),
        ("lambda", opts.lambda.clone()),
        ("p-local", opts.p_local.clone()),
        ("seed", opts.seed.clone()),
        ("seeds", opts.seeds.clone()),
        ("horizon", opts.horizon.clone()),
        ("warmup", opts.warmup.clone()),
        ("scramble", opts.scramble.clone()),
        ("s-bits", opts.s_bits.clone()),
        ("b-bits", opts.b_bits.clone()),
        ("t-bits", opts.t_bits.clone()),
        ("kernel", opts.kernel.clone()),
        ("compute-gap", opts.compute_gap.clone()),
        ("window", opts.window.clone()),
        ("buffer-depth", opts.buffer_depth.clone()),
        ("out", path_str(&opts.out)),
        ("parallel", opts.parallel.clone()),
        ("trace-out", path_str(&opts.trace_out)),
    ]
    .into_iter()
    .collect();
    let src = Sources { flags, config: &config };

    let variants = match src.raw("variant") {
        None => default_variants(command),
        Some(s) => parse_list("variant", &s)?,
    };
    let lambdas = parse_lambda(&src.raw("lambda").unwrap_or_else(|| "0:0.5:0.01".into()))?;
    let p_local = match src.raw("p-local") {
        None => Vec::new(),
        Some(s) => parse_list("p-local", &s)?,
    };
    let horizon: u64 = src.get("horizon", 100_000)?;
    let warmup: u64 = src.get("warmup", horizon / 5)?;
    let scramble = match src.raw("scramble") {
        Some(s) => parse_scramble(&s)?,
        None if command == CommandKind::Kernel => vec![false, true],
        None => vec![true],
    };
    let d = AddressLayout::default();
    let layout = AddressLayout::new(
        src.get("b-bits", d.bank_bits)?,
        src.get("t-bits", d.tile_bits)?,
        d.row_bits,
        src.get("s-bits", d.seq_row_bits)?,
    )?;
    let kernels = match src.raw("kernel") {
        None => KernelKind::ALL.to_vec(),
        Some(s) => parse_list("kernel", &s)?,
    };
    let spec = ExperimentSpec {
        command,
        variants,
        lambdas,
        p_local,
        seed: src.get("seed", 1)?,
        seeds: src.get("seeds", 3)?,
        horizon,
        warmup,
        scramble,
        layout,
        buffer_depth: src.get("buffer-depth", DEFAULT_BUFFER_DEPTH)?,
        kernels,
        compute_gap: src.get("compute-gap", 1)?,
        window: src.get("window", DEFAULT_WINDOW)?,
        out: PathBuf::from(src.raw("out").unwrap_or_else(|| "./results.csv".into())),
        parallel: src.get("parallel", 1)?,
        trace_out: src.raw("trace-out").map(PathBuf::from),
    };
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &ExperimentSpec) -> Result<()> {
    if spec.variants.is_empty() {
        return Err(Error::Config("no variant selected".into()));
    }
    for &v in &spec.variants {
        spec.cluster(v).validate()?;
    }
    if spec.command == CommandKind::Sweep {
        if spec.horizon == 0 || spec.warmup >= spec.horizon {
            return Err(Error::Config(format!(
                "warm-up {} must be below the horizon {}",
                spec.warmup, spec.horizon
            )));
        }
        if spec.seeds == 0 {
            return Err(Error::Config("--seeds must be positive".into()));
        }
        if let Some(&l) = spec.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::Config(format!("lambda {l} outside [0, 1]")));
        }
        if let Some(&p) = spec.p_local.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("p_local {p} outside [0, 1]")));
        }
        if spec.trace_out.is_some() {
            return Err(Error::Config("--trace-out applies to the kernel command".into()));
        }
    }
    if spec.window == 0 {
        return Err(Error::Config("--window must be positive".into()));
    }
    if spec.command == CommandKind::Kernel && spec.kernels.len() > 1 && spec.trace_out.is_some() {
        return Err(Error::Config("--trace-out needs a single --kernel".into()));
    }
    Ok(())
}

/// Parses `args` and runs the selected command, writing reports to `out`.
/// Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (kind, opts) = match &cli.command {
        Command::Sweep(o) => (CommandKind::Sweep, o),
        Command::Kernel(o) => (CommandKind::Kernel, o),
        Command::ZeroLoad(o) => (CommandKind::ZeroLoad, o),
        Command::ScrambleCheck(o) => (CommandKind::ScrambleCheck, o),
    };
    let spec = match resolve(kind, opts) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("l1net: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(&spec, out) {
        Ok(true) => 0,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("l1net: {e}");
            EXIT_CHECK_FAILED
        }
    }
}

/// Runs a resolved spec. `Ok(false)` means a check reported a deviation.
pub fn execute(spec: &ExperimentSpec, out: &mut dyn Write) -> Result<bool> {
    match spec.command {
        CommandKind::Sweep => {
            let rows = cmd_sweep(spec)?;
            write_file(&spec.out, |w| metrics::write_csv(w, &rows, spec.horizon))?;
            writeln!(out, "wrote {} rows to {}", rows.len(), spec.out.display())?;
            Ok(true)
        }
        CommandKind::Kernel => {
            let rows = cmd_kernel(spec)?;
            write_file(&spec.out, |w| write_kernel_csv(w, &rows))?;
            for r in &rows {
                writeln!(
                    out,
                    "{:<7} {:<6} scramble={:<5} cycles={:<8} relative={:.3}",
                    r.kernel.name(),
                    r.label(),
                    r.scramble,
                    r.result.cycles,
                    r.relative
                )?;
            }
            writeln!(out, "wrote {} rows to {}", rows.len(), spec.out.display())?;
            Ok(true)
        }
        CommandKind::ZeroLoad => {
            let mut ok = true;
            for &v in &spec.variants {
                let table = cmd_zero_load(&spec.cluster(v))?;
                write!(out, "{table}")?;
                ok &= table.passed();
            }
            Ok(ok)
        }
        CommandKind::ScrambleCheck => match cmd_scramble_check(&spec.layout) {
            Ok(r) => {
                writeln!(
                    out,
                    "scramble check passed: {} window addresses, {} outside addresses checked",
                    r.window_checked, r.outside_checked
                )?;
                Ok(true)
            }
            Err(v) => {
                writeln!(out, "scramble check FAILED: {v}")?;
                Ok(false)
            }
        },
    }
}

fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let ctx = |e: Error| e.context(format!("writing {}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(|e| ctx(e.into()))?);
    f(&mut w).map_err(ctx)?;
    w.flush().map_err(|e| ctx(e.into()))
}

/// Runs every (variant, p_local) sweep, in that order.
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    let locals: Vec<Option<f64>> = if spec.p_local.is_empty() {
        vec![None]
    } else {
        spec.p_local.iter().copied().map(Some).collect()
    };
    let mut rows = Vec::new();
    for &v in &spec.variants {
        for &p in &locals {
            let cfg = SweepConfig {
                cluster: spec.cluster(v),
                p_local: p,
                seed: spec.seed,
                seeds: spec.seeds,
                run: spec.run_config(),
                parallel: spec.parallel,
            };
            rows.extend(metrics::sweep(&spec.lambdas, &cfg)?);
        }
    }
    Ok(rows)
}

/// One kernel run and its performance relative to the matching baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub kernel: KernelKind,
    pub variant: Variant,
    pub scramble: bool,
    pub result: KernelResult,
    pub baseline_cycles: u64,
    /// Baseline cycles over variant cycles; above 1 is faster than the baseline.
    pub relative: f64,
}

impl KernelRow {
    /// Variant name, with TopX under scrambling reported as `topxs`.
    pub fn label(&self) -> &'static str {
        match (self.variant, self.scramble) {
            (Variant::TopX, true) => "topxs",
            (v, _) => v.name(),
        }
    }
}

/// Runs each kernel on every selected (variant, scramble) pair plus the
/// TopX baseline of each scramble setting.
pub fn cmd_kernel(spec: &ExperimentSpec) -> Result<Vec<KernelRow>> {
    let mut variants: Vec<Variant> = spec.variants.iter().copied().filter(|&v| v != Variant::TopX).collect();
    variants.push(Variant::TopX);
    let graphs: BTreeMap<Variant, NetworkGraph> = variants
        .iter()
        .map(|&v| Ok((v, build_cluster(&spec.cluster(v))?)))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for &kind in &spec.kernels {
        // traces do not depend on the variant or on scrambling
        let traces = kernels::generate(&spec.kernel_config(kind, false), &spec.cluster(Variant::TopX))
            .map_err(|e| e.context(format!("kernel {kind}")))?;
        if let Some(p) = &spec.trace_out {
            write_file(p, |w| kernels::write_traces(w, &traces))?;
        }
        for &scramble in &spec.scramble {
            for &v in &variants {
                jobs.push((kind, v, scramble, traces.clone()));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallel.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<KernelResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|(kind, v, scramble, traces)| {
                kernels::run_kernel(&graphs[v], traces.clone(), *scramble, spec.window)
                    .map_err(|e| e.context(format!("kernel {kind} on {v}")))
            })
            .collect()
    });
    let runs: Vec<(KernelKind, Variant, bool, KernelResult)> = jobs
        .into_iter()
        .zip(results)
        .map(|((k, v, s, _), r)| Ok((k, v, s, r?)))
        .collect::<Result<_>>()?;

    let baseline = |kind: KernelKind, scramble: bool| {
        runs.iter()
            .find(|(k, v, s, _)| *k == kind && *v == Variant::TopX && *s == scramble)
            .map(|r| r.3.cycles)
            .expect("baseline scheduled")
    };
    Ok(runs
        .iter()
        .map(|&(kernel, variant, scramble, result)| {
            let baseline_cycles = baseline(kernel, scramble);
            KernelRow {
                kernel,
                variant,
                scramble,
                result,
                baseline_cycles,
                relative: baseline_cycles as f64 / result.cycles.max(1) as f64,
            }
        })
        .collect())
}

pub const KERNEL_CSV_HEADER: [&str; 8] = [
    "kernel",
    "variant",
    "scramble",
    "cycles",
    "loads",
    "stores",
    "baseline_cycles",
    "relative_perf",
];

pub fn write_kernel_csv<W: Write>(out: W, rows: &[KernelRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(KERNEL_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.kernel.name().to_string(),
            r.label().to_string(),
            if r.scramble { "on" } else { "off" }.to_string(),
            r.result.cycles.to_string(),
            r.result.loads.to_string(),
            r.result.stores.to_string(),
            r.baseline_cycles.to_string(),
            format!("{:.4}", r.relative),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Latencies observed for one pair class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLatency {
    pub class: LatencyClass,
    pub expected: u64,
    pub pairs: u64,
    pub min: u64,
    pub max: u64,
    /// Pairs whose path latency differs from `expected`.
    pub deviations: u64,
    pub simulated: u64,
    /// Simulated pairs whose measured latency differs from `expected`.
    pub simulated_deviations: u64,
    /// First deviating (core, bank, latency).
    pub first_deviation: Option<(u32, u32, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroLoadTable {
    pub variant: Variant,
    pub classes: Vec<ClassLatency>,
}

impl ZeroLoadTable {
    pub fn passed(&self) -> bool {
        self.classes
            .iter()
            .all(|c| c.deviations == 0 && c.simulated_deviations == 0)
    }

    /// Distinct latencies across all pairs, ascending.
    pub fn latencies(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.classes.iter().flat_map(|c| [c.min, c.max]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl std::fmt::Display for ZeroLoadTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}:", self.variant)?;
        for c in &self.classes {
            write!(
                f,
                "  {:<12} expected {}  path latency {}..{} over {} pairs  simulated {}  deviations {}",
                c.class.to_string(),
                c.expected,
                c.min,
                c.max,
                c.pairs,
                c.simulated,
                c.deviations + c.simulated_deviations
            )?;
            if let Some((core, bank, lat)) = c.first_deviation {
                write!(f, "  first: core {core} bank {bank} -> {lat}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Measures the round trip of a single load in an otherwise empty network.
pub fn isolated_latency(graph: &NetworkGraph, state: &mut SimState, core: u32, bank: u32) -> Result<u64> {
    let layout = graph
        .cluster
        .as_ref()
        .map(|c| c.layout)
        .ok_or_else(|| Error::Config("graph has no cluster layout".into()))?;
    let loc = PhysicalLocation {
        tile: bank / layout.banks_per_tile(),
        bank: bank % layout.banks_per_tile(),
        row: 0,
    };
    let id = state.enqueue(graph, core, AccessKind::Load, 0, loc, bank)?;
    for _ in 0..64 {
        state.step(graph)?;
        if let Some(c) = state.drain_completions().find(|c| c.req_id == id) {
            return Ok(c.latency());
        }
    }
    Err(Error::Fault {
        cycle: state.cycle(),
        msg: format!("isolated load core {core} bank {bank} did not complete"),
    })
}

/// Checks the path latency of every (core, bank) pair against the expected
/// class latency, and simulates one isolated load per (core tile, bank tile)
/// pair.
pub fn cmd_zero_load(cluster: &ClusterConfig) -> Result<ZeroLoadTable> {
    let graph = build_cluster(cluster)?;
    let mut by_class: BTreeMap<LatencyClass, ClassLatency> = BTreeMap::new();
    let entry = |class: LatencyClass| -> ClassLatency {
        ClassLatency {
            class,
            expected: cluster.expected_zero_load(class),
            pairs: 0,
            min: u64::MAX,
            max: 0,
            deviations: 0,
            simulated: 0,
            simulated_deviations: 0,
            first_deviation: None,
        }
    };
    for core in 0..cluster.num_cores() {
        for bank in 0..cluster.num_banks() {
            let class = cluster.classify(core, bank);
            let lat = graph.zero_load_latency(core, bank)?;
            let e = by_class.entry(class).or_insert_with(|| entry(class));
            e.pairs += 1;
            e.min = e.min.min(lat);
            e.max = e.max.max(lat);
            if lat != e.expected {
                e.deviations += 1;
                e.first_deviation.get_or_insert((core, bank, lat));
            }
        }
    }
    let mut state = SimState::new(&graph, 1);
    let (cpt, bpt) = (cluster.cores_per_tile, cluster.banks_per_tile());
    for src in 0..cluster.tiles() {
        for dst in 0..cluster.tiles() {
            let core = src * cpt + dst % cpt;
            let bank = dst * bpt + src % bpt;
            let class = cluster.classify(core, bank);
            let lat = isolated_latency(&graph, &mut state, core, bank)?;
            let e = by_class.entry(class).or_insert_with(|| entry(class));
            e.simulated += 1;
            if lat != e.expected {
                e.simulated_deviations += 1;
                e.first_deviation.get_or_insert((core, bank, lat));
            }
        }
    }
    Ok(ZeroLoadTable {
        variant: cluster.variant,
        classes: by_class.into_values().collect(),
    })
}

/// Exhaustive scrambling check of `layout`.
pub fn cmd_scramble_check(layout: &AddressLayout) -> std::result::Result<ScrambleReport, ScrambleViolation> {
    check_scrambling(layout, |a| layout.scramble(a).expect("address inside L1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> Options {
        Options::default()
    }

    #[test]
    fn defaults() {
        let s = resolve(CommandKind::Sweep, &opts()).unwrap();
        assert_eq!(s.variants, vec![Variant::Top1, Variant::Top4, Variant::TopH]);
        assert_eq!(s.lambdas.len(), 51);
        assert_eq!(s.out, PathBuf::from("./results.csv"));
        assert_eq!((s.seeds, s.horizon, s.warmup), (3, 100_000, 20_000));
        let k = resolve(CommandKind::Kernel, &opts()).unwrap();
        assert_eq!(k.scramble, vec![false, true]);
        assert_eq!(k.kernels, KernelKind::ALL.to_vec());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "# comment\nvariant = toph\nhorizon = 500\nseed=9\n\n").unwrap();
        let mut o = opts();
        o.config = Some(path);
        o.horizon = Some("700".into());
        let s = resolve(CommandKind::Sweep, &o).unwrap();
        assert_eq!(s.variants, vec![Variant::TopH]);
        assert_eq!((s.horizon, s.seed), (700, 9));
    }

    #[test]
    fn bad_config() {
        assert!(parse_config("colour = red").is_err());
        assert!(parse_config("variant").is_err());
        assert_eq!(parse_config("p_local = 0.5").unwrap()["p-local"], "0.5");
    }

    #[test]
    fn invalid_specs_rejected() {
        let cases: [(&str, fn(&mut Options)); 8] = [
            ("variant", |o| o.variant = Some("top9".into())),
            ("lambda", |o| o.lambda = Some("0.5:0.1:0.1".into())),
            ("lambda range", |o| o.lambda = Some("0:2:0.5".into())),
            ("p-local", |o| o.p_local = Some("1.5".into())),
            ("scramble", |o| o.scramble = Some("maybe".into())),
            ("warmup", |o| o.warmup = Some("200000".into())),
            ("s-bits", |o| o.s_bits = Some("9".into())),
            ("seeds", |o| o.seeds = Some("x".into())),
        ];
        for (name, f) in cases {
            let mut o = opts();
            f(&mut o);
            assert!(resolve(CommandKind::Sweep, &o).is_err(), "{name} accepted");
        }
        let mut o = opts();
        o.kernel = Some("fft".into());
        assert!(resolve(CommandKind::Kernel, &o).is_err());
    }

    #[test]
    fn lambda_single_point() {
        assert_eq!(parse_lambda("0.25").unwrap(), vec![0.25]);
        assert_eq!(parse_lambda("0:0.1:0.05").unwrap(), vec![0.0, 0.05, 0.1]);
    }

    #[test]
    fn zero_load_tables() {
        let t = cmd_zero_load(&ClusterConfig::new(Variant::TopH)).unwrap();
        assert!(t.passed(), "{t}");
        assert_eq!(t.latencies(), vec![1, 3, 5]);
        let t = cmd_zero_load(&ClusterConfig::new(Variant::TopX)).unwrap();
        assert_eq!(t.latencies(), vec![1]);
    }

    #[test]
    fn scramble_check_degenerate_window() {
        let layout = AddressLayout::default().with_seq_row_bits(0).unwrap();
        let r = cmd_scramble_check(&layout).unwrap();
        assert_eq!(r.window_checked, layout.seq_window_bytes() as u64);
        assert_eq!(cmd_scramble_check(&AddressLayout::default()).unwrap().window_checked, 65536);
    }

    #[test]
    fn kernel_rows_have_baselines() {
        let mut o = opts();
        o.kernel = Some("dct".into());
        o.variant = Some("toph".into());
        let dir = tempfile::tempdir().unwrap();
        o.out = Some(dir.path().join("k.csv"));
        let s = resolve(CommandKind::Kernel, &o).unwrap();
        let rows = cmd_kernel(&s).unwrap();
        let labels: Vec<&str> = rows.iter().map(KernelRow::label).collect();
        assert_eq!(labels, vec!["toph", "topx", "toph", "topxs"]);
        assert!(rows.iter().filter(|r| r.variant == Variant::TopX).all(|r| r.relative == 1.0));
    }
}
