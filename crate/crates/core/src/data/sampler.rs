//! Reproducible mini-batch sampling over valid window starts.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Series, WindowBatch, WindowSpec};
use crate::error::{Error, Result};

/// Samples `n` windows. Start indices are drawn uniformly without replacement
/// when `n ≤ M` and with replacement otherwise.
pub fn sample_batch(
    series: &Series,
    spec: &WindowSpec,
    n: usize,
    seed: u64,
    long_period_hint: f64,
) -> Result<WindowBatch> {
    let starts = series.window_starts(spec);
    if starts.is_empty() {
        return Err(Error::Domain(format!(
            "no complete windows: series length {}, window {}",
            series.len(),
            spec.window_len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if n <= starts.len() {
        let mut pool = starts.clone();
        pool.shuffle(&mut rng);
        pool.truncate(n);
        pool
    } else {
        (0..n).map(|_| starts[rng.gen_range(0..starts.len())]).collect()
    };
    WindowBatch::gather(series, &chosen, spec, long_period_hint)
}

/// Epoch-wise sampler: shuffles every valid start once per epoch and yields
/// complete batches (a trailing partial batch is dropped).
pub struct EpochSampler {
    starts: Vec<usize>,
    batch: usize,
}

impl EpochSampler {
    pub fn new(series: &Series, spec: &WindowSpec, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        let starts = series.window_starts(spec);
        if starts.is_empty() {
            return Err(Error::Domain("series has no complete windows".into()));
        }
        Ok(Self { starts, batch })
    }

    /// Number of windows available per epoch.
    pub fn window_count(&self) -> usize {
        self.starts.len()
    }

    /// Batches for one epoch, permuted by `rng`. Each batch is a list of
    /// local start indices. When fewer windows than one batch exist, the
    /// whole permutation forms a single short batch.
    pub fn epoch(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut pool = self.starts.clone();
        pool.shuffle(rng);
        if pool.len() < self.batch {
            return vec![pool];
        }
        pool.chunks_exact(self.batch).map(|c| c.to_vec()).collect()
    }
}
