//! Series ingestion, chronological splitting, sliding-window enumeration and
//! reproducible batch sampling.

mod csv_io;
mod features;
mod sampler;
mod split;

pub use csv_io::{load_csv, write_series_csv};
pub use features::timestamp_features;
pub use sampler::{sample_batch, EpochSampler};
pub use split::{chrono_split, SplitManifest, Splits};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

/// Sampling frequency of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freq {
    Hourly,
    Min15,
    Min10,
    Daily,
    Weekly,
    None,
}

impl Freq {
    pub fn as_str(&self) -> &'static str {
        match self {
            Freq::Hourly => "hourly",
            Freq::Min15 => "15min",
            Freq::Min10 => "10min",
            Freq::Daily => "daily",
            Freq::Weekly => "weekly",
            Freq::None => "none",
        }
    }

    /// Whether timestamp features include minute-of-hour.
    pub fn sub_hourly(&self) -> bool {
        matches!(self, Freq::Min15 | Freq::Min10)
    }

    /// Default ACF pre-smoothing kernel: one seasonal day plus one for
    /// sub-daily rates, one week for daily, and a short window otherwise.
    pub fn default_smoothing(&self) -> usize {
        match self {
            Freq::Hourly => 25,
            Freq::Min15 => 97,
            Freq::Min10 => 145,
            Freq::Daily => 7,
            Freq::Weekly => 5,
            Freq::None => 25,
        }
    }
}

/// One observed time series (or a chronological slice of one).
///
/// `offset` anchors row 0 at its index in the full source series, so window
/// start indices stay globally meaningful across splits. The first
/// `context_len` rows are read-only context borrowed from the preceding
/// split: they may serve as window inputs but never as forecast targets.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    channels: usize,
    values: Vec<f64>,
    timestamps: Option<Vec<NaiveDateTime>>,
    pub freq: Freq,
    offset: usize,
    context_len: usize,
}

impl Series {
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        values: Vec<f64>,
        timestamps: Option<Vec<NaiveDateTime>>,
        freq: Freq,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Domain("series needs at least one channel".into()));
        }
        if values.len() % channels != 0 {
            return Err(Error::Dimension(format!(
                "value count {} not divisible by {channels} channels",
                values.len()
            )));
        }
        let rows = values.len() / channels;
        if let Some(ts) = &timestamps {
            if ts.len() != rows {
                return Err(Error::Dimension(format!(
                    "{} timestamps for {rows} rows",
                    ts.len()
                )));
            }
            if ts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data("timestamps must be strictly increasing".into()));
            }
        }
        Ok(Self { name: name.into(), channels, values, timestamps, freq, offset: 0, context_len: 0 })
    }

    /// Physical length including context rows.
    pub fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows owned by this split (excludes borrowed context).
    pub fn owned_len(&self) -> usize {
        self.len() - self.context_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn value(&self, row: usize, ch: usize) -> f64 {
        self.values[row * self.channels + ch]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.channels..(row + 1) * self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One channel as a contiguous vector (physical rows).
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.value(r, ch)).collect()
    }

    pub fn timestamp(&self, row: usize) -> Option<NaiveDateTime> {
        self.timestamps.as_ref().map(|t| t[row])
    }

    pub fn has_timestamps(&self) -> bool {
        self.timestamps.is_some()
    }

    /// Chronological sub-slice over physical rows `[start, end)`, keeping
    /// `context` leading rows as read-only context.
    pub(crate) fn slice(&self, start: usize, end: usize, context: usize) -> Series {
        assert!(start <= end && end <= self.len() && context <= end - start);
        Series {
            name: self.name.clone(),
            channels: self.channels,
            values: self.values[start * self.channels..end * self.channels].to_vec(),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
            freq: self.freq,
            offset: self.offset + start,
            context_len: context,
        }
    }

    /// Local start indices of all windows whose targets lie in owned rows.
    pub fn window_starts(&self, spec: &WindowSpec) -> Vec<usize> {
        let w = spec.window_len();
        if self.len() < w {
            return Vec::new();
        }
        (0..=self.len() - w)
            .filter(|s| s + spec.input_len >= self.context_len)
            .collect()
    }
}

/// Window geometry: `input_len` (I) observed points, `output_len` (O) points
/// to predict, `window_len` = I + O.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub input_len: usize,
    pub output_len: usize,
}

impl WindowSpec {
    pub fn new(input_len: usize, output_len: usize) -> Result<Self> {
        if input_len == 0 || output_len == 0 {
            return Err(Error::Parameter(format!(
                "window lengths must be >= 1, got I={input_len}, O={output_len}"
            )));
        }
        Ok(Self { input_len, output_len })
    }

    pub fn window_len(&self) -> usize {
        self.input_len + self.output_len
    }
}

/// Number of length-`I+O` sliding windows in a series of length `t`:
/// `M = T − (I+O) + 1`.
pub fn window_count(t: usize, input_len: usize, output_len: usize) -> Result<usize> {
    let w = input_len + output_len;
    if t < w {
        return Err(Error::Domain(format!(
            "series length {t} shorter than window {w} (I={input_len}, O={output_len})"
        )));
    }
    Ok(t - w + 1)
}

/// A mini-batch of sampled windows with everything the model consumes:
/// inputs, targets, global index runs, per-window input means, and timestamp
/// features over the whole window.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub spec: WindowSpec,
    pub channels: usize,
    pub feat_dim: usize,
    /// N×I×c, row-major time-then-channel.
    pub inputs: Vec<f64>,
    /// N×O×c.
    pub targets: Vec<f64>,
    /// Global start index per window; the index run is `start..start+W`.
    pub starts: Vec<usize>,
    /// N×c per-window, per-channel arithmetic mean of the input segment.
    pub input_means: Vec<f64>,
    /// N×W×f.
    pub features: Vec<f64>,
}

impl WindowBatch {
    /// Gathers windows at the given local start indices.
    pub fn gather(
        series: &Series,
        local_starts: &[usize],
        spec: &WindowSpec,
        long_period_hint: f64,
    ) -> Result<Self> {
        let (i, o, w) = (spec.input_len, spec.output_len, spec.window_len());
        let c = series.channels();
        let n = local_starts.len();
        let mut inputs = Vec::with_capacity(n * i * c);
        let mut targets = Vec::with_capacity(n * o * c);
        let mut starts = Vec::with_capacity(n);
        let mut input_means = Vec::with_capacity(n * c);
        let mut features = Vec::new();
        let mut feat_dim = 0;
        for &s in local_starts {
            if s + w > series.len() {
                return Err(Error::Domain(format!(
                    "window start {s} overruns series of length {}",
                    series.len()
                )));
            }
            inputs.extend_from_slice(&series.values()[s * c..(s + i) * c]);
            targets.extend_from_slice(&series.values()[(s + i) * c..(s + w) * c]);
            starts.push(series.offset() + s);
            for ch in 0..c {
                let mean = (s..s + i).map(|r| series.value(r, ch)).sum::<f64>() / i as f64;
                input_means.push(mean);
            }
            let (f, fd) = timestamp_features(series, s, w, long_period_hint)?;
            feat_dim = fd;
            features.extend(f);
        }
        Ok(Self { spec: *spec, channels: c, feat_dim, inputs, targets, starts, input_means, features })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Global index run of window `n`.
    pub fn index_run(&self, n: usize) -> std::ops::Range<usize> {
        self.starts[n]..self.starts[n] + self.spec.window_len()
    }

    /// Input segment of window `n`, channel `ch`, as a contiguous vector.
    pub fn input_channel(&self, n: usize, ch: usize) -> Vec<f64> {
        let i = self.spec.input_len;
        let base = n * i * self.channels;
        (0..i).map(|t| self.inputs[base + t * self.channels + ch]).collect()
    }

    /// Target segment of window `n`, channel `ch`.
    pub fn target_channel(&self, n: usize, ch: usize) -> Vec<f64> {
        let o = self.spec.output_len;
        let base = n * o * self.channels;
        (0..o).map(|t| self.targets[base + t * self.channels + ch]).collect()
    }

    pub fn input_mean(&self, n: usize, ch: usize) -> f64 {
        self.input_means[n * self.channels + ch]
    }

    /// Timestamp features for the input segment of window `n` (I×f).
    pub fn input_features(&self, n: usize) -> Vec<f64> {
        let w = self.spec.window_len();
        let base = n * w * self.feat_dim;
        self.features[base..base + self.spec.input_len * self.feat_dim].to_vec()
    }
}
