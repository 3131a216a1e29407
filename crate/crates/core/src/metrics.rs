//! Run statistics, load sweeps and CSV output.

use std::io::Write;

use rayon::prelude::*;

use crate::engine::{run_log, AccessKind, Completion, RunConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, mix64};
use crate::topology::{build_cluster, ClusterConfig, NetworkGraph, Variant};
use crate::traffic::{SyntheticConfig, SyntheticWorkload};

/// Latency histogram bins of one cycle each; larger latencies share the
/// overflow bin.
pub const HISTOGRAM_BINS: usize = 4096;

/// Measurement interval `[start, end)` in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasureWindow {
    pub start: u64,
    pub end: u64,
}

impl MeasureWindow {
    pub fn new(start: u64, end: u64) -> Result<Self> {
        if end <= start {
            return Err(Error::Config(format!(
                "empty measurement window [{start}, {end})"
            )));
        }
        Ok(MeasureWindow { start, end })
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, cycle: u64) -> bool {
        (self.start..self.end).contains(&cycle)
    }
}

/// Streaming record of one run, reduced by [`RunLog::finalize`].
#[derive(Debug, Clone)]
pub struct RunLog {
    pub window: MeasureWindow,
    pub cores: u32,
    /// Generation counter at the window start and end.
    pub offered_start: u64,
    pub offered_end: u64,
    /// Transactions retired inside the window.
    pub retired_in_window: u64,
    pub latency_sum: u64,
    pub latency_count: u64,
    pub histogram: Vec<u64>,
    pub inter_tile_traversals: u64,
    pub link_counts: Vec<u64>,
    /// Order-sensitive digest of every completion.
    pub digest: u64,
}

impl RunLog {
    pub fn new(window: MeasureWindow, cores: u32) -> Self {
        RunLog {
            window,
            cores,
            offered_start: 0,
            offered_end: 0,
            retired_in_window: 0,
            latency_sum: 0,
            latency_count: 0,
            histogram: vec![0; HISTOGRAM_BINS + 1],
            inter_tile_traversals: 0,
            link_counts: Vec::new(),
            digest: 0,
        }
    }

    pub fn record(&mut self, c: &Completion) {
        self.digest = mix64(self.digest ^ c.req_id ^ (c.complete_cycle << 32) ^ ((c.core as u64) << 48));
        if self.window.contains(c.complete_cycle) {
            self.retired_in_window += 1;
        }
        if c.kind == AccessKind::Load && self.window.contains(c.gen_cycle) && c.complete_cycle < self.window.end {
            let lat = c.latency();
            self.latency_sum += lat;
            self.latency_count += 1;
            self.histogram[(lat as usize).min(HISTOGRAM_BINS)] += 1;
        }
    }

    pub fn finalize(&self) -> Result<Metrics> {
        if self.window.is_empty() || self.cores == 0 {
            return Err(Error::Config("empty measurement window".into()));
        }
        let denom = (self.cores as u64 * self.window.len()) as f64;
        Ok(Metrics {
            offered: (self.offered_end - self.offered_start) as f64 / denom,
            throughput: self.retired_in_window as f64 / denom,
            latency_sum: self.latency_sum,
            latency_count: self.latency_count,
            histogram: self.histogram.clone(),
            inter_tile_traversals: self.inter_tile_traversals,
            link_counts: self.link_counts.clone(),
            window: self.window,
            cores: self.cores,
            runs: 1,
            digest: self.digest,
        })
    }
}

/// Reduced statistics of one or more runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Generated requests per core per cycle in the window.
    pub offered: f64,
    /// Retired requests per core per cycle in the window.
    pub throughput: f64,
    pub latency_sum: u64,
    pub latency_count: u64,
    pub histogram: Vec<u64>,
    pub inter_tile_traversals: u64,
    pub link_counts: Vec<u64>,
    pub window: MeasureWindow,
    pub cores: u32,
    pub runs: u32,
    pub digest: u64,
}

impl Metrics {
    /// Mean generation-to-completion latency of measured loads, `None` when
    /// nothing completed.
    pub fn avg_latency(&self) -> Option<f64> {
        (self.latency_count > 0).then(|| self.latency_sum as f64 / self.latency_count as f64)
    }

    /// Latency percentile from the histogram. The overflow bin reports
    /// [`HISTOGRAM_BINS`].
    pub fn latency_percentile(&self, q: f64) -> Option<u64> {
        if self.latency_count == 0 {
            return None;
        }
        let rank = ((q * self.latency_count as f64).ceil() as u64).clamp(1, self.latency_count);
        let mut acc = 0;
        for (lat, &n) in self.histogram.iter().enumerate() {
            acc += n;
            if acc >= rank {
                return Some(lat as u64);
            }
        }
        None
    }

    pub fn completed(&self) -> u64 {
        self.latency_count
    }

    /// Combines runs of the same point: means of the rates, pooled latency.
    pub fn merge(&mut self, other: &Metrics) {
        let (a, b) = (self.runs as f64, other.runs as f64);
        self.offered = (self.offered * a + other.offered * b) / (a + b);
        self.throughput = (self.throughput * a + other.throughput * b) / (a + b);
        self.latency_sum += other.latency_sum;
        self.latency_count += other.latency_count;
        for (h, o) in self.histogram.iter_mut().zip(&other.histogram) {
            *h += o;
        }
        self.inter_tile_traversals += other.inter_tile_traversals;
        if self.link_counts.len() == other.link_counts.len() {
            for (l, o) in self.link_counts.iter_mut().zip(&other.link_counts) {
                *l += o;
            }
        }
        self.runs += other.runs;
        self.digest = mix64(self.digest ^ other.digest);
    }
}

/// Sweep settings shared by every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub cluster: ClusterConfig,
    /// `None` selects uniform traffic over the interleaved map.
    pub p_local: Option<f64>,
    pub seed: u64,
    pub seeds: u32,
    pub run: RunConfig,
    pub parallel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: Variant,
    pub lambda: f64,
    pub p_local: f64,
    pub seed: u64,
    pub metrics: Metrics,
}

impl SweepRow {
    pub fn throughput(&self) -> f64 {
        self.metrics.throughput
    }

    pub fn avg_latency(&self) -> Option<f64> {
        self.metrics.avg_latency()
    }
}

/// Seed of repetition `rep` at grid index `index`.
pub fn point_seed(base: u64, variant: Variant, p_local: Option<f64>, index: usize, rep: u32) -> u64 {
    let p = p_local.map_or(u64::MAX, f64::to_bits);
    derive_seed(&[base, variant as u64, p, index as u64, rep as u64])
}

/// Builds `lambda` grid points from `start:stop:step`, inclusive of `stop`.
pub fn lambda_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || stop < start {
        return Err(Error::Config(format!("bad lambda range {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| round6(start + i as f64 * step)).collect())
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn run_point(graph: &NetworkGraph, cfg: &SweepConfig, lambda: f64, index: usize) -> Result<Metrics> {
    let mut merged: Option<Metrics> = None;
    for rep in 0..cfg.seeds.max(1) {
        let seed = point_seed(cfg.seed, cfg.cluster.variant, cfg.p_local, index, rep);
        let traffic = match cfg.p_local {
            None => SyntheticConfig::uniform(lambda, seed),
            Some(p) => SyntheticConfig::local_biased(lambda, p, seed),
        };
        let mut w = SyntheticWorkload::new(traffic, graph)?;
        let m = run_log(graph, &mut w, &cfg.run)?.finalize()?;
        match merged.as_mut() {
            None => merged = Some(m),
            Some(acc) => acc.merge(&m),
        }
    }
    Ok(merged.expect("at least one repetition"))
}

/// Runs every grid point with fresh state and returns one row per point in
/// grid order. Points run concurrently on up to `cfg.parallel` threads.
pub fn sweep(grid: &[f64], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("lambda grid must be nondecreasing".into()));
    }
    let graph = build_cluster(&cfg.cluster)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Metrics>> = pool.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, &lambda)| {
                run_point(&graph, cfg, lambda, i)
                    .map_err(|e| e.context(format!("{} lambda={lambda}", cfg.cluster.variant)))
            })
            .collect()
    });
    grid.iter()
        .zip(results)
        .map(|(&lambda, m)| {
            Ok(SweepRow {
                variant: cfg.cluster.variant,
                lambda,
                p_local: cfg.p_local.unwrap_or(0.0),
                seed: cfg.seed,
                metrics: m?,
            })
        })
        .collect()
}

/// Knee of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub lambda: f64,
    /// Mean accepted throughput at and beyond the knee.
    pub plateau: f64,
}

/// Smallest λ whose average latency exceeds three times `zero_load_remote`.
/// `None` when the grid never reaches the knee.
pub fn saturation_point(rows: &[SweepRow], zero_load_remote: f64) -> Option<Saturation> {
    let threshold = 3.0 * zero_load_remote;
    let knee = rows
        .iter()
        .position(|r| r.avg_latency().map_or(false, |l| l > threshold))?;
    let tail = &rows[knee..];
    let plateau = tail.iter().map(SweepRow::throughput).sum::<f64>() / tail.len() as f64;
    Some(Saturation {
        lambda: rows[knee].lambda,
        plateau,
    })
}

pub const CSV_HEADER: [&str; 9] = [
    "variant",
    "lambda",
    "p_local",
    "seed",
    "throughput",
    "avg_latency",
    "p99_latency",
    "completed",
    "horizon",
];

/// Writes sweep rows with the fixed column order of [`CSV_HEADER`]. Absent
/// latencies are written as empty fields.
pub fn write_csv<W: Write>(out: W, rows: &[SweepRow], horizon: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.variant.name().to_string(),
            format!("{:.4}", r.lambda),
            format!("{:.4}", r.p_local),
            r.seed.to_string(),
            format!("{:.6}", m.throughput),
            m.avg_latency().map_or(String::new(), |l| format!("{l:.4}")),
            m.latency_percentile(0.99).map_or(String::new(), |l| l.to_string()),
            m.completed().to_string(),
            horizon.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Completion;

    fn completion(id: u64, gen: u64, done: u64) -> Completion {
        Completion {
            req_id: id,
            core: 0,
            kind: AccessKind::Load,
            bank: 0,
            gen_cycle: gen,
            inject_cycle: gen,
            complete_cycle: done,
        }
    }

    #[test]
    fn empty_window_is_an_error() {
        assert!(MeasureWindow::new(10, 10).is_err());
    }

    #[test]
    fn nothing_completed() {
        let log = RunLog::new(MeasureWindow::new(0, 100).unwrap(), 4);
        let m = log.finalize().unwrap();
        assert_eq!(m.throughput, 0.0);
        assert_eq!(m.avg_latency(), None);
        assert_eq!(m.latency_percentile(0.99), None);
    }

    #[test]
    fn window_filtering() {
        let mut log = RunLog::new(MeasureWindow::new(10, 20).unwrap(), 1);
        log.record(&completion(0, 5, 11)); // generated before the window
        log.record(&completion(1, 12, 17));
        log.record(&completion(2, 18, 25)); // completes after the horizon
        let m = log.finalize().unwrap();
        assert_eq!(m.latency_count, 1);
        assert_eq!(m.avg_latency(), Some(5.0));
        assert!((m.throughput - 0.2).abs() < 1e-12);
        let total: u64 = m.histogram.iter().sum();
        assert_eq!(total, m.completed());
    }

    #[test]
    fn percentile_from_histogram() {
        let mut log = RunLog::new(MeasureWindow::new(0, 10_000).unwrap(), 1);
        for i in 0..100 {
            log.record(&completion(i, 0, if i < 99 { 3 } else { 40 }));
        }
        let m = log.finalize().unwrap();
        assert_eq!(m.latency_percentile(0.99), Some(3));
        assert_eq!(m.latency_percentile(1.0), Some(40));
    }

    #[test]
    fn grid_arithmetic() {
        assert_eq!(lambda_grid(0.0, 0.5, 0.01).unwrap().len(), 51);
        assert_eq!(lambda_grid(0.0, 1.0, 0.05).unwrap().len(), 21);
        let g = lambda_grid(0.0, 0.5, 0.01).unwrap();
        assert_eq!(g[33], 0.33);
        assert!(lambda_grid(0.5, 0.0, 0.1).is_err());
    }

    fn row(lambda: f64, thr: f64, lat: u64) -> SweepRow {
        let mut log = RunLog::new(MeasureWindow::new(0, 100).unwrap(), 1);
        log.record(&completion(0, 0, lat));
        let mut m = log.finalize().unwrap();
        m.throughput = thr;
        SweepRow {
            variant: Variant::Top1,
            lambda,
            p_local: 0.0,
            seed: 0,
            metrics: m,
        }
    }

    #[test]
    fn saturation_detection() {
        let rows = vec![row(0.05, 0.05, 5), row(0.1, 0.1, 9), row(0.15, 0.11, 40), row(0.2, 0.09, 80)];
        let s = saturation_point(&rows, 5.0).unwrap();
        assert_eq!(s.lambda, 0.15);
        assert!((s.plateau - 0.10).abs() < 1e-12);
        assert_eq!(saturation_point(&rows[..2], 5.0), None);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![row(0.05, 0.05, 5)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows, 100).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "variant,lambda,p_local,seed,throughput,avg_latency,p99_latency,completed,horizon"
        );
        assert_eq!(lines.next().unwrap(), "top1,0.0500,0.0000,0,0.050000,5.0000,5,1,100");
    }
}
