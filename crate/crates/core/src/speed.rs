//! Analytic speed ratio and a wall-clock harness that times one sequential
//! pass over `T` steps against the sliced network over the same batch.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cell::GruParams;
use crate::engine::{hierarchical_forward, run_layer, LayerOutput, SeqBatch};
use crate::error::{Result, SrnnError};
use crate::slice::{build_plan, SliceConfig};
use crate::tensor::SeededRng;

/// Median times below this are treated as timer noise.
pub const MIN_MEASURABLE_SECS: f64 = 20e-6;

/// `1/n^k + n·k/T`.
pub fn predict_ratio(n: usize, k: usize, t: usize) -> f64 {
    1.0 / (n as f64).powi(k as i32) + (n * k) as f64 / t as f64
}

pub fn theoretical_speedup(n: usize, k: usize, t: usize) -> f64 {
    1.0 / predict_ratio(n, k, t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seq_len: usize,
    pub slices: usize,
    pub depth: usize,
    pub hidden: usize,
    pub embed: usize,
    pub batch: usize,
    pub workers: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seq_len: 512,
            slices: 8,
            depth: 2,
            hidden: 50,
            embed: 50,
            batch: 32,
            workers: 1,
            trials: 5,
            warmup: 1,
            seed: 42,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        build_plan(SliceConfig::new(self.seq_len, self.slices, self.depth))?;
        if self.trials < 3 {
            return Err(SrnnError::Argument(format!("trials must be ≥ 3, got {}", self.trials)));
        }
        if self.warmup < 1 {
            return Err(SrnnError::Argument("warmup must be ≥ 1".into()));
        }
        if self.hidden == 0 || self.embed == 0 || self.batch == 0 || self.workers == 0 {
            return Err(SrnnError::Argument(
                "hidden, embed, batch and workers must all be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seq_len: usize,
    pub slices: usize,
    pub depth: usize,
    pub hidden: usize,
    pub batch: usize,
    pub workers: usize,
    pub r_pred: f64,
    pub steps_rnn: usize,
    pub steps_srnn: usize,
    pub t_rnn: f64,
    pub t_srnn: f64,
    pub speedup: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_median(warmup: usize, trials: usize, mut f: impl FnMut() -> Result<LayerOutput>) -> Result<f64> {
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        std::hint::black_box(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Times both arms on one shared batch. The layer-0 cell of the sliced
/// network is the very cell the sequential arm runs.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let plan = build_plan(SliceConfig::new(cfg.seq_len, cfg.slices, cfg.depth))?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut cells = vec![GruParams::init(cfg.embed, cfg.hidden, &mut rng)];
    for _ in 0..cfg.depth {
        cells.push(GruParams::init(cfg.hidden, cfg.hidden, &mut rng));
    }
    let data: Vec<f64> = (0..cfg.batch * cfg.seq_len * cfg.embed)
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();

    let sequential = || run_layer(&cells[0], SeqBatch::new(&data, cfg.batch, cfg.seq_len, cfg.embed)?, None, 1);
    let sliced = |workers| hierarchical_forward(&cells, &plan, &data, cfg.batch, workers);

    let reference = sliced(1)?;
    let parallel = sliced(cfg.workers)?;
    if reference != parallel {
        return Err(SrnnError::Consistency(format!(
            "sliced forward differs between 1 and {} workers",
            cfg.workers
        )));
    }
    let steps_rnn = sequential()?.depth.iter().copied().max().unwrap_or(0);
    let steps_srnn = parallel.depth.iter().copied().max().unwrap_or(0);

    let t_rnn = time_median(cfg.warmup, cfg.trials, sequential)?;
    let t_srnn = time_median(cfg.warmup, cfg.trials, || sliced(cfg.workers))?;
    if t_rnn < MIN_MEASURABLE_SECS || t_srnn < MIN_MEASURABLE_SECS {
        return Err(SrnnError::Harness(format!(
            "median times {t_rnn:.2e}s / {t_srnn:.2e}s are below timer resolution; increase --batch"
        )));
    }
    Ok(BenchReport {
        seq_len: cfg.seq_len,
        slices: cfg.slices,
        depth: cfg.depth,
        hidden: cfg.hidden,
        batch: cfg.batch,
        workers: cfg.workers,
        r_pred: predict_ratio(cfg.slices, cfg.depth, cfg.seq_len),
        steps_rnn,
        steps_srnn,
        t_rnn,
        t_srnn,
        speedup: t_rnn / t_srnn,
    })
}

pub const TABLE_HEADER: &str = "T\tn\tk\tR_pred\tsteps_rnn\tsteps_srnn\tt_rnn\tt_srnn\tspeedup";

fn sorted(reports: &[BenchReport]) -> Vec<&BenchReport> {
    let mut rows: Vec<&BenchReport> = reports.iter().collect();
    rows.sort_by_key(|r| (r.seq_len, r.slices, r.depth));
    rows
}

/// Header plus one tab-separated row per report, by ascending `T`.
pub fn emit_table(reports: &[BenchReport]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in sorted(reports) {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}\t{:.2}\n",
            r.seq_len, r.slices, r.depth, r.r_pred, r.steps_rnn, r.steps_srnn, r.t_rnn, r.t_srnn, r.speedup
        ));
    }
    out
}

/// One JSON object per line, same order as [`emit_table`].
pub fn emit_jsonl(reports: &[BenchReport]) -> Result<String> {
    let mut out = String::new();
    for r in sorted(reports) {
        let line = serde_json::to_string(r).map_err(|e| SrnnError::Harness(format!("serializing report: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
