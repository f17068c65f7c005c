//! Point metrics (MSE, MAE) and the DTW-based shape/temporal pair.
//!
//! `shape_dtw` is the classic monotone dynamic-programming alignment cost
//! with squared pointwise errors; `temporal_dtw` is the temporal distortion
//! of the optimal alignment path — the mean squared deviation of its cells
//! from the main diagonal. Ties in the DP prefer diagonal, then advancing
//! the first sequence, then the second, which makes paths deterministic:
//! identical sequences always align along the diagonal and score zero on
//! both metrics.

use crate::error::{Error, Result};

/// Mean squared error over equal-shape buffers.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_same_len(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute error over equal-shape buffers.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_same_len(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

fn check_same_len(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "metric buffers must be nonempty and equal: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// An optimal monotone alignment: cumulative squared-error cost and one
/// optimal path of `(i, j)` cells from `(0,0)` to `(n−1,m−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    pub distance: f64,
    pub path: Vec<(usize, usize)>,
}

impl DtwAlignment {
    /// Temporal distortion: mean over path cells of `(i − j)²`.
    pub fn temporal_distortion(&self) -> f64 {
        let s: f64 = self
            .path
            .iter()
            .map(|&(i, j)| {
                let d = i as f64 - j as f64;
                d * d
            })
            .sum();
        s / self.path.len() as f64
    }
}

/// Classic DTW with squared pointwise cost and deterministic tie-breaking
/// (diagonal, then advance `a`, then advance `b`).
pub fn dtw_align(a: &[f64], b: &[f64]) -> Result<DtwAlignment> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::Domain("dtw over an empty sequence".into()));
    }
    let cost = |i: usize, j: usize| {
        let d = a[i] - b[j];
        d * d
    };
    let mut acc = vec![f64::INFINITY; n * m];
    // 0 = diagonal, 1 = advance a, 2 = advance b, 3 = origin.
    let mut step = vec![3u8; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j);
            let idx = i * m + j;
            if i == 0 && j == 0 {
                acc[idx] = c;
                continue;
            }
            let diag = if i > 0 && j > 0 { acc[(i - 1) * m + (j - 1)] } else { f64::INFINITY };
            let down = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
            let right = if j > 0 { acc[idx - 1] } else { f64::INFINITY };
            let best = diag.min(down).min(right);
            acc[idx] = c + best;
            step[idx] = if diag == best {
                0
            } else if down == best {
                1
            } else {
                2
            };
        }
    }
    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        match step[i * m + j] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            2 => j -= 1,
            _ => break,
        }
    }
    path.reverse();
    Ok(DtwAlignment { distance: acc[n * m - 1], path })
}

/// Per-channel DTW alignment cost, averaged over channels. Buffers are
/// `len×channels` row-major.
pub fn shape_dtw(pred: &[f64], truth: &[f64], channels: usize) -> Result<f64> {
    per_channel_mean(pred, truth, channels, |a, b| Ok(dtw_align(a, b)?.distance))
}

/// Per-channel temporal distortion of the optimal DTW path, averaged.
pub fn temporal_dtw(pred: &[f64], truth: &[f64], channels: usize) -> Result<f64> {
    per_channel_mean(pred, truth, channels, |a, b| Ok(dtw_align(a, b)?.temporal_distortion()))
}

fn per_channel_mean(
    pred: &[f64],
    truth: &[f64],
    channels: usize,
    f: impl Fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<f64> {
    check_same_len(pred, truth)?;
    if channels == 0 || pred.len() % channels != 0 {
        return Err(Error::Dimension(format!(
            "buffer of {} values is not {channels} channels",
            pred.len()
        )));
    }
    let len = pred.len() / channels;
    let mut acc = 0.0;
    for ch in 0..channels {
        let a: Vec<f64> = (0..len).map(|t| pred[t * channels + ch]).collect();
        let b: Vec<f64> = (0..len).map(|t| truth[t * channels + ch]).collect();
        acc += f(&a, &b)?;
    }
    Ok(acc / channels as f64)
}

/// Evaluation summary over a split: aggregate and per-horizon values.
/// Aggregates are plain means of per-window values.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub split: String,
    pub windows: usize,
    pub channels: usize,
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub shape_dtw: f64,
    pub temporal_dtw: f64,
    pub per_horizon_mse: Vec<f64>,
    pub per_horizon_mae: Vec<f64>,
    pub config_hash: String,
}

impl EvalReport {
    /// Mean per-horizon MSE over an inclusive 1-based horizon band.
    pub fn horizon_band_mse(&self, from: usize, to: usize) -> f64 {
        let lo = from.saturating_sub(1);
        let hi = to.min(self.horizon);
        self.per_horizon_mse[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    }

    /// CSV rows: aggregate lines first, then one line per horizon step.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash={}\n", self.config_hash);
        out.push_str("metric,horizon,value\n");
        out.push_str(&format!("mse,all,{}\n", self.mse));
        out.push_str(&format!("mae,all,{}\n", self.mae));
        out.push_str(&format!("shape_dtw,all,{}\n", self.shape_dtw));
        out.push_str(&format!("temporal_dtw,all,{}\n", self.temporal_dtw));
        for h in 0..self.horizon {
            out.push_str(&format!("mse,{},{}\n", h + 1, self.per_horizon_mse[h]));
            out.push_str(&format!("mae,{},{}\n", h + 1, self.per_horizon_mae[h]));
        }
        out
    }

    /// Flat key-value summary.
    pub fn to_summary(&self) -> String {
        format!(
            "config_hash = {}\nsplit = {}\nwindows = {}\nchannels = {}\nhorizon = {}\n\
             mse = {}\nmae = {}\nshape_dtw = {}\ntemporal_dtw = {}\n",
            self.config_hash,
            self.split,
            self.windows,
            self.channels,
            self.horizon,
            self.mse,
            self.mae,
            self.shape_dtw,
            self.temporal_dtw
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive monotone-path oracle: minimal cost over every path,
    /// accumulated in path order exactly like the DP does.
    fn dtw_oracle(a: &[f64], b: &[f64]) -> f64 {
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let d = a[i] - b[j];
            let acc = acc + d * d;
            if i == a.len() - 1 && j == b.len() - 1 {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, acc, best);
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn point_metric_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mse(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn point_metrics_match_streaming_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (mut se, mut ae) = (0.0, 0.0);
        for k in 0..64 {
            se += (p[k] - t[k]).powi(2);
            ae += (p[k] - t[k]).abs();
        }
        assert!((mse(&p, &t).unwrap() - se / 64.0).abs() < 1e-12);
        assert!((mae(&p, &t).unwrap() - ae / 64.0).abs() < 1e-12);
    }

    #[test]
    fn identical_sequences_align_on_the_diagonal() {
        let a = [0.3, -1.0, 2.5, 0.0];
        let al = dtw_align(&a, &a).unwrap();
        assert_eq!(al.distance, 0.0);
        assert_eq!(al.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(al.temporal_distortion(), 0.0);
    }

    #[test]
    fn hand_cases() {
        // No alignment can avoid the unit gaps: every path pays at least 2.
        assert_eq!(dtw_align(&[0.0, 0.0], &[1.0, 1.0]).unwrap().distance, 2.0);
        // The extra zero is absorbed for free.
        assert_eq!(dtw_align(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0, 0.0]).unwrap().distance, 0.0);
        assert!(dtw_align(&[], &[1.0]).is_err());
    }

    #[test]
    fn dp_equals_exhaustive_enumeration_up_to_length_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 1..=8usize {
            for m in 1..=8usize {
                for _ in 0..3 {
                    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let got = dtw_align(&a, &b).unwrap();
                    assert_eq!(got.distance, dtw_oracle(&a, &b), "n={n} m={m}");
                    // The returned path must reproduce the distance exactly.
                    let path_cost: f64 =
                        got.path.iter().fold(0.0, |acc, &(i, j)| acc + (a[i] - b[j]).powi(2));
                    assert_eq!(path_cost, got.distance);
                }
            }
        }
    }

    #[test]
    fn dtw_distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(
                dtw_align(&a, &b).unwrap().distance,
                dtw_align(&b, &a).unwrap().distance
            );
        }
    }

    #[test]
    fn shape_dtw_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(shape_dtw(&a, &a, 1).unwrap(), 0.0);
        // Single points: plain squared difference.
        assert_eq!(shape_dtw(&[2.0], &[5.0], 1).unwrap(), 9.0);
        // A constant shift cannot be absorbed: n·shift² along the forced
        // diagonal-dominant path (verified against the enumeration oracle).
        let shifted: Vec<f64> = a.iter().map(|v| v + 2.0).collect();
        let d = shape_dtw(&a, &shifted, 1).unwrap();
        assert_eq!(d, dtw_oracle(&a, &shifted));
        assert!(d >= 3.0 * 4.0 - 8.0 - 1e-12, "shift cost stays substantial: {d}");
    }

    #[test]
    fn temporal_dtw_cases() {
        let a = [0.5, 0.7, 0.9];
        assert_eq!(temporal_dtw(&a, &a, 1).unwrap(), 0.0);
        // Constant pair: every cell ties, diagonal preference keeps i = j.
        assert_eq!(temporal_dtw(&[1.0; 5], &[1.0; 5], 1).unwrap(), 0.0);
        // Lag-1 impulse shift: the unique zero-cost path is
        // (0,0),(0,1),(1,2),(2,3),(3,3) with mean squared deviation 3/5.
        let p = [0.0, 1.0, 0.0, 0.0];
        let t = [0.0, 0.0, 1.0, 0.0];
        let al = dtw_align(&p, &t).unwrap();
        assert_eq!(al.distance, 0.0);
        let td = temporal_dtw(&p, &t, 1).unwrap();
        assert!((td - 0.6).abs() < 1e-12, "got {td}");
    }

    #[test]
    fn multichannel_metrics_average_channels() {
        // Channel 0 identical, channel 1 shifted by 1 everywhere.
        let pred = [1.0, 2.0, 2.0, 3.0, 3.0, 4.0];
        let truth = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let got = shape_dtw(&pred, &truth, 2).unwrap();
        let ch1: Vec<f64> = vec![2.0, 3.0, 4.0];
        let ch1t: Vec<f64> = vec![1.0, 2.0, 3.0];
        let want = (0.0 + dtw_align(&ch1, &ch1t).unwrap().distance) / 2.0;
        assert_eq!(got, want);
    }

    #[test]
    fn report_band_and_serialization() {
        let report = EvalReport {
            split: "test".into(),
            windows: 4,
            channels: 1,
            horizon: 4,
            mse: 0.25,
            mae: 0.5,
            shape_dtw: 1.0,
            temporal_dtw: 0.1,
            per_horizon_mse: vec![0.1, 0.2, 0.3, 0.4],
            per_horizon_mae: vec![0.2, 0.4, 0.6, 0.8],
            config_hash: "deadbeef".into(),
        };
        assert!((report.horizon_band_mse(1, 2) - 0.15000000000000002).abs() < 1e-15);
        assert!((report.horizon_band_mse(3, 4) - 0.35).abs() < 1e-12);
        let csv = report.to_csv();
        assert!(csv.starts_with("# config_hash=deadbeef\nmetric,horizon,value\n"));
        assert!(csv.contains("mse,all,0.25\n"));
        assert!(csv.contains("mae,4,0.8\n"));
        assert!(report.to_summary().contains("windows = 4"));
    }
}
