//! Global autocorrelation over the training series and the window relation
//! derived from it.
//!
//! The stored function is the mean-centered, variance-normalized sample ACF
//! per channel, so the relation `r(t1, t2) = |R(|t1−t2|)|` is a valid weight
//! in `[0, 1]`. Short-period fluctuations are smoothed out with a centered
//! moving average before the ACF is taken, keeping the relation focused on
//! long-period structure. Two computation paths exist — a direct `O(T·H)`
//! sum and an FFT of the zero-padded centered series — and must agree.

use std::cell::Cell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::Series;
use crate::error::{Error, Result};

thread_local! {
    static ACF_CONSTRUCTIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`global_acf`] computations on this thread. Training asserts it
/// runs the ACF exactly once per run.
pub fn construction_count() -> usize {
    ACF_CONSTRUCTIONS.with(|c| c.get())
}

/// Which ACF computation path to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcfMethod {
    Direct,
    #[default]
    Fft,
}

/// Normalized global autocorrelation per channel for lags `0..=max_lag`.
#[derive(Debug, Clone)]
pub struct AcfTable {
    channels: usize,
    max_lag: usize,
    smoothing_k: usize,
    /// `channels × (max_lag + 1)`, row-major by channel.
    values: Vec<f64>,
}

impl AcfTable {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn smoothing_k(&self) -> usize {
        self.smoothing_k
    }

    /// Normalized ACF value at `lag` for `channel`.
    pub fn value(&self, channel: usize, lag: usize) -> f64 {
        self.values[channel * (self.max_lag + 1) + lag]
    }

    /// Window relation `r = |R(|t1−t2|)| ∈ [0, 1]`, symmetric in its
    /// arguments. Lags beyond the table clamp to 0 with a logged warning;
    /// training never probes them, diagnostics might.
    pub fn relation(&self, t1: usize, t2: usize, channel: usize) -> f64 {
        let lag = t1.abs_diff(t2);
        if lag > self.max_lag {
            log::warn!("relation lag {lag} beyond table max {}; clamping to 0", self.max_lag);
            return 0.0;
        }
        self.value(channel, lag).abs()
    }

    /// Pairwise relation matrix (N×N, row-major) over window start indices:
    /// symmetric with unit diagonal.
    pub fn relation_matrix(&self, starts: &[usize], channel: usize) -> Vec<f64> {
        let n = starts.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n + i] = 1.0;
            for j in i + 1..n {
                let r = self.relation(starts[i], starts[j], channel);
                out[i * n + j] = r;
                out[j * n + i] = r;
            }
        }
        out
    }
}

/// Centered moving average with replicate padding; length-preserving.
/// The kernel must be odd so the filter has no phase shift.
pub fn smooth(series: &Series, k: usize) -> Result<Series> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::Parameter(format!("smoothing kernel must be odd, got {k}")));
    }
    if k > series.len() {
        return Err(Error::Parameter(format!(
            "smoothing kernel {k} longer than series {}",
            series.len()
        )));
    }
    if k == 1 {
        return Ok(series.clone());
    }
    let t = series.len();
    let c = series.channels();
    let half = k / 2;
    let mut out = vec![0.0; t * c];
    for ch in 0..c {
        let x = series.channel(ch);
        // Running sum over the replicate-padded channel.
        let at = |i: isize| -> f64 { x[i.clamp(0, t as isize - 1) as usize] };
        let mut acc: f64 = (-(half as isize)..=half as isize).map(at).sum();
        out[ch] = acc / k as f64;
        for r in 1..t {
            acc += at(r as isize + half as isize) - at(r as isize - 1 - half as isize);
            out[r * c + ch] = acc / k as f64;
        }
    }
    let timestamps = (0..t).map(|r| series.timestamp(r)).collect::<Option<Vec<_>>>();
    let mut smoothed = Series::new(series.name.clone(), c, out, timestamps, series.freq)?;
    // Preserve slice bookkeeping so global indices stay aligned.
    smoothed = smoothed.slice(0, t, series.context_len());
    let _ = &smoothed;
    Ok(smoothed)
}

/// Computes the smoothed, normalized global ACF of the training series for
/// lags `0..=max_lag`.
///
/// Per channel the estimate is biased (a single `Σ(s−s̄)²` normalizer, no
/// per-lag count correction), which guarantees `|R| ≤ 1`. A zero-variance
/// channel makes the relation undefined and is an error naming the channel.
pub fn global_acf(
    train: &Series,
    max_lag: usize,
    smoothing_k: usize,
    method: AcfMethod,
) -> Result<AcfTable> {
    let t = train.len();
    if t < max_lag + 2 {
        return Err(Error::Domain(format!(
            "series length {t} too short for max lag {max_lag}"
        )));
    }
    let smoothed = smooth(train, smoothing_k)?;
    let c = smoothed.channels();
    let mut values = Vec::with_capacity(c * (max_lag + 1));
    ACF_CONSTRUCTIONS.with(|cnt| cnt.set(cnt.get() + 1));
    for ch in 0..c {
        let mut x = smoothed.channel(ch);
        let mean = x.iter().sum::<f64>() / t as f64;
        for v in x.iter_mut() {
            *v -= mean;
        }
        let denom: f64 = x.iter().map(|v| v * v).sum();
        if denom <= 0.0 {
            return Err(Error::Domain(format!(
                "channel {ch} has zero variance after smoothing; relation undefined"
            )));
        }
        let mut row = match method {
            AcfMethod::Direct => acf_direct(&x, max_lag, denom),
            AcfMethod::Fft => acf_fft(&x, max_lag, denom),
        };
        // Lag 0 is 1 by construction; pin it against FFT roundoff.
        row[0] = 1.0;
        values.extend(row);
    }
    Ok(AcfTable { channels: c, max_lag, smoothing_k, values })
}

fn acf_direct(x: &[f64], max_lag: usize, denom: f64) -> Vec<f64> {
    let t = x.len();
    (0..=max_lag)
        .map(|h| {
            let s: f64 = (h..t).map(|i| x[i] * x[i - h]).sum();
            s / denom
        })
        .collect()
}

fn acf_fft(x: &[f64], max_lag: usize, denom: f64) -> Vec<f64> {
    // Zero-pad to at least 2T so circular correlation equals linear.
    let t = x.len();
    let size = (2 * t).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> =
        x.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    fft.process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    let scale = 1.0 / (size as f64 * denom);
    (0..=max_lag).map(|h| buf[h].re * scale).collect()
}
