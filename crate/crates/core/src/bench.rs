//! Throughput of stream finalisation against block Toeplitz hashing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{HashSeedSource, ToeplitzMatrix};
use crate::privacy_amp::StreamPad;
use crate::stats;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub stream_secs: f64,
    pub fast_block_secs: f64,
    pub naive_block_secs: Option<f64>,
}

impl BenchRow {
    pub fn stream_bps(&self) -> f64 {
        self.n as f64 / self.stream_secs
    }

    pub fn fast_block_bps(&self) -> f64 {
        self.n as f64 / self.fast_block_secs
    }

    pub fn naive_block_bps(&self) -> Option<f64> {
        self.naive_block_secs.map(|s| self.n as f64 / s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares `stream_secs = a + b n`.
    pub stream_intercept: f64,
    pub stream_slope: f64,
    pub stream_r2: f64,
    /// Per-bit cost at the largest size over per-bit cost at the smallest.
    pub stream_growth: f64,
    pub fast_block_growth: f64,
    pub stream_wins_at_largest: bool,
}

/// Bytes written before each timed run so that every size starts from main
/// memory rather than from whichever cache level it happens to fit.
const EVICT_BYTES: usize = 64 << 20;

/// Stream runs are cheap, so they are repeated at least this often.
const STREAM_REPEATS_MIN: usize = 25;

fn evict(scratch: &mut [u64]) {
    for (i, w) in scratch.iter_mut().enumerate() {
        *w = w.wrapping_add(i as u64);
    }
    std::hint::black_box(&scratch);
}

fn min_time<F: FnMut() -> Result<()>>(repeats: usize, scratch: &mut [u64], mut f: F) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        evict(scratch);
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Time, per size `n`: XOR of a reconciled key with a precomputed pad, and the
/// fast (and, up to `naive_max`, naive) product of an `n/2 x n` Toeplitz
/// matrix with the key. Block figures are the minimum over `repeats`
/// cold-cache runs; the stream figure is the median of at least
/// `STREAM_REPEATS_MIN` cold-cache runs taken round-robin over the sizes.
pub fn run_bench(sizes: &[usize], repeats: usize, naive_max: usize, seed: u64) -> Result<BenchReport> {
    if sizes.len() < 2 {
        return Err(Error::InvalidInput("need at least two sizes to fit a trend".into()));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(Error::InvalidInput(format!("size {n} is too small")));
    }
    let mut src = HashSeedSource::from_seed(seed, "bench");
    let mut scratch = vec![0u64; EVICT_BYTES / 8];
    let mut inputs = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let a = src.take(n)?;
        let pad = StreamPad::from_parts(src.take(n)?, "bench", 0);
        inputs.push((a, pad));
    }
    // Sizes are interleaved within each round so that a slow stretch on the
    // host lands on every size rather than on one of them.
    let rounds = repeats.max(STREAM_REPEATS_MIN);
    let mut samples = vec![Vec::with_capacity(rounds); sizes.len()];
    for _ in 0..rounds {
        for ((a, pad), out) in inputs.iter().zip(samples.iter_mut()) {
            let mut p = pad.clone();
            let mut chunk = a.clone();
            evict(&mut scratch);
            let t = Instant::now();
            p.finalize_in_place(0, &mut chunk)?;
            std::hint::black_box(&chunk);
            out.push(t.elapsed().as_secs_f64());
        }
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for ((&n, (a, _)), mut times) in sizes.iter().zip(&inputs).zip(samples) {
        times.sort_by(f64::total_cmp);
        let stream_secs = times[times.len() / 2];
        let m = ToeplitzMatrix::generate(n / 2, n, &mut src)?;
        let fast_block_secs = min_time(repeats, &mut scratch, || {
            std::hint::black_box(m.apply_fast(a)?);
            Ok(())
        })?;
        let naive_block_secs = if n <= naive_max {
            Some(min_time(repeats, &mut scratch, || {
                std::hint::black_box(m.apply(a)?);
                Ok(())
            })?)
        } else {
            None
        };
        rows.push(BenchRow {
            n,
            stream_secs,
            fast_block_secs,
            naive_block_secs,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.stream_secs).collect();
    let (a, b, r2) = stats::linear_fit(&xs, &ys);
    let per_bit = |r: &BenchRow, secs: f64| secs / r.n as f64;
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    Ok(BenchReport {
        stream_intercept: a,
        stream_slope: b,
        stream_r2: r2,
        stream_growth: per_bit(last, last.stream_secs) / per_bit(first, first.stream_secs),
        fast_block_growth: per_bit(last, last.fast_block_secs) / per_bit(first, first.fast_block_secs),
        stream_wins_at_largest: last.stream_bps() > last.fast_block_bps(),
        rows,
    })
}

/// Powers of two from `2^lo` to `2^hi`.
pub fn pow2_sizes(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

pub fn format_table(report: &BenchReport) -> String {
    let mut out = format!(
        "{:>10} {:>14} {:>14} {:>14}\n",
        "n", "stream b/s", "fast b/s", "naive b/s"
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{:>10} {:>14.3e} {:>14.3e} {:>14}\n",
            r.n,
            r.stream_bps(),
            r.fast_block_bps(),
            r.naive_block_bps().map_or("-".to_string(), |v| format!("{v:.3e}"))
        ));
    }
    out.push_str(&format!(
        "stream fit: t = {:.3e} + {:.3e} n, R^2 = {:.4}\n",
        report.stream_intercept, report.stream_slope, report.stream_r2
    ));
    out.push_str(&format!(
        "per-bit growth: stream {:.2}x, fast block {:.2}x\n",
        report.stream_growth, report.fast_block_growth
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_runs() {
        let report = run_bench(&pow2_sizes(10, 13), 3, 1 << 12, 1).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows[..3].iter().all(|r| r.naive_block_secs.is_some()));
        assert!(report.rows[3].naive_block_secs.is_none());
        assert!(format_table(&report).contains("stream fit"));
        assert!(run_bench(&[1024], 1, 0, 1).is_err());
    }
}
