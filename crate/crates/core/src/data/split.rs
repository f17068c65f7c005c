//! Chronological train/validation/test splitting.
//!
//! Splits are contiguous, ordered and non-overlapping in ownership. The
//! validation and test slices additionally carry the preceding `I` rows as
//! read-only context so their first windows have full inputs; those rows are
//! never forecast targets in the owning split.

use crate::data::{Series, WindowSpec};
use crate::error::{Error, Result};

/// The three chronological splits plus the boundary record.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Series,
    pub val: Series,
    pub test: Series,
    pub manifest: SplitManifest,
}

/// Boundary record written next to every run: total length, the requested
/// ratios, and the owned row ranges of each split in global indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub total_len: usize,
    pub ratios: [f64; 3],
    pub train_end: usize,
    pub val_end: usize,
    pub context_len: usize,
}

impl SplitManifest {
    pub fn to_text(&self) -> String {
        format!(
            "total_len = {}\nratios = {}:{}:{}\ntrain_end = {}\nval_end = {}\ncontext_len = {}\n",
            self.total_len,
            self.ratios[0],
            self.ratios[1],
            self.ratios[2],
            self.train_end,
            self.val_end,
            self.context_len
        )
    }
}

/// Splits `series` chronologically by `ratios` (any positive weights, e.g.
/// 6:2:2). Errors when any owned split is shorter than one window.
pub fn chrono_split(series: &Series, ratios: [f64; 3], spec: &WindowSpec) -> Result<Splits> {
    if ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if series.context_len() != 0 {
        return Err(Error::Config("chrono_split expects the full source series".into()));
    }
    let t = series.len();
    let sum: f64 = ratios.iter().sum();
    let n_train = (t as f64 * ratios[0] / sum).floor() as usize;
    let n_val = (t as f64 * ratios[1] / sum).floor() as usize;
    let n_test = t - n_train - n_val;

    let w = spec.window_len();
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n < w {
            return Err(Error::Config(format!(
                "{name} split has {n} points, shorter than one window of {w}"
            )));
        }
    }

    let ctx = spec.input_len;
    let train = series.slice(0, n_train, 0);
    let val = series.slice(n_train - ctx, n_train + n_val, ctx);
    let test = series.slice(n_train + n_val - ctx, t, ctx);
    let manifest = SplitManifest {
        total_len: t,
        ratios,
        train_end: n_train,
        val_end: n_train + n_val,
        context_len: ctx,
    };
    Ok(Splits { train, val, test, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Freq;

    fn toy(t: usize) -> Series {
        Series::new("toy", 1, (0..t).map(|v| v as f64).collect(), None, Freq::None).unwrap()
    }

    #[test]
    fn six_two_two_lengths() {
        let spec = WindowSpec::new(3, 2).unwrap();
        let s = chrono_split(&toy(100), [6.0, 2.0, 2.0], &spec).unwrap();
        assert_eq!(s.train.owned_len(), 60);
        assert_eq!(s.val.owned_len(), 20);
        assert_eq!(s.test.owned_len(), 20);
        assert_eq!(s.train.owned_len() + s.val.owned_len() + s.test.owned_len(), 100);
    }

    #[test]
    fn seven_one_two_lengths() {
        let spec = WindowSpec::new(3, 2).unwrap();
        let s = chrono_split(&toy(1000), [7.0, 1.0, 2.0], &spec).unwrap();
        assert_eq!(s.train.owned_len(), 700);
        assert_eq!(s.val.owned_len(), 100);
        assert_eq!(s.test.owned_len(), 200);
    }

    #[test]
    fn short_split_is_config_error() {
        let spec = WindowSpec::new(2, 1).unwrap();
        let err = chrono_split(&toy(10), [8.0, 1.0, 1.0], &spec).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn context_rows_precede_owned_rows() {
        let spec = WindowSpec::new(4, 2).unwrap();
        let s = chrono_split(&toy(40), [6.0, 2.0, 2.0], &spec).unwrap();
        // val owns rows 24..32, with 4 context rows 20..24 prepended.
        assert_eq!(s.val.offset(), 20);
        assert_eq!(s.val.context_len(), 4);
        assert_eq!(s.val.value(0, 0), 20.0);
        assert_eq!(s.val.value(4, 0), 24.0);
        // Global indices line up with the source series.
        assert_eq!(s.test.offset(), 32 - 4);
        assert_eq!(s.test.value(s.test.context_len(), 0), 32.0);
    }

    #[test]
    fn eval_windows_cover_exactly_the_owned_targets() {
        let spec = WindowSpec::new(4, 2).unwrap();
        let s = chrono_split(&toy(40), [6.0, 2.0, 2.0], &spec).unwrap();
        let starts = s.val.window_starts(&spec);
        // L_val − O + 1 = 8 − 2 + 1 = 7 windows, first input fully in context.
        assert_eq!(starts.len(), 7);
        assert_eq!(starts[0], 0);
        // The first target row is the first owned row.
        assert_eq!(s.val.value(starts[0] + 4, 0), 24.0);
    }
}
