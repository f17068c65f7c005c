//! Timestamp-derived feature encoding for the long-term encoder.
//!
//! Calendar series get month-of-year, day-of-month, day-of-week and
//! hour-of-day (plus minute-of-hour when sub-hourly), each affinely scaled to
//! `[−0.5, 0.5]`. Series without a calendar get the sine/cosine of the global
//! index at a configured long-period hint, so the encoder still sees absolute
//! position information that survives window-unit normalization.

use chrono::{Datelike, Timelike};

use crate::data::{Freq, Series};
use crate::error::{Error, Result};

fn rescale(v: f64, lo: f64, hi: f64) -> f64 {
    (v - lo) / (hi - lo) - 0.5
}

/// Features for the window of length `w` starting at local row `start`.
/// Returns the row-major `w×f` buffer and the feature count `f`.
pub fn timestamp_features(
    series: &Series,
    start: usize,
    w: usize,
    long_period_hint: f64,
) -> Result<(Vec<f64>, usize)> {
    if start + w > series.len() {
        return Err(Error::Domain(format!(
            "feature window {start}..{} overruns series of length {}",
            start + w,
            series.len()
        )));
    }
    if series.freq != Freq::None && series.has_timestamps() {
        let f = if series.freq.sub_hourly() { 5 } else { 4 };
        let mut out = Vec::with_capacity(w * f);
        for r in start..start + w {
            let ts = series.timestamp(r).expect("calendar series has timestamps");
            out.push(rescale(ts.month() as f64, 1.0, 12.0));
            out.push(rescale(ts.day() as f64, 1.0, 31.0));
            out.push(rescale(ts.weekday().num_days_from_monday() as f64, 0.0, 6.0));
            out.push(rescale(ts.hour() as f64, 0.0, 23.0));
            if f == 5 {
                out.push(rescale(ts.minute() as f64, 0.0, 59.0));
            }
        }
        Ok((out, f))
    } else {
        if long_period_hint <= 0.0 {
            return Err(Error::Parameter(format!(
                "long-period hint must be positive, got {long_period_hint}"
            )));
        }
        let mut out = Vec::with_capacity(w * 2);
        for r in start..start + w {
            let t = (series.offset() + r) as f64;
            let phase = 2.0 * std::f64::consts::PI * t / long_period_hint;
            out.push(phase.sin());
            out.push(phase.cos());
        }
        Ok((out, 2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn hourly_series(t0: chrono::NaiveDateTime, rows: usize) -> Series {
        let ts: Vec<_> = (0..rows).map(|i| t0 + chrono::Duration::hours(i as i64)).collect();
        Series::new("cal", 1, vec![0.0; rows], Some(ts), Freq::Hourly).unwrap()
    }

    #[test]
    fn calendar_endpoints() {
        // Midnight, Monday, January 1st: month, weekday and hour all sit at
        // the lower endpoint −0.5.
        let t0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let s = hourly_series(t0, 30);
        let (f, fd) = timestamp_features(&s, 0, 1, 0.0).unwrap();
        assert_eq!(fd, 4);
        assert_eq!(f[0], -0.5, "month");
        assert_eq!(f[1], -0.5, "day");
        assert_eq!(f[2], -0.5, "weekday (Monday)");
        assert_eq!(f[3], -0.5, "hour");
        // Hour 23 maps to the upper endpoint.
        let (f23, _) = timestamp_features(&s, 23, 1, 0.0).unwrap();
        assert_eq!(f23[3], 0.5);
    }

    #[test]
    fn clockless_series_uses_sin_cos_of_global_index() {
        let s = Series::new("raw", 1, vec![0.0; 10], None, Freq::None).unwrap();
        let (f, fd) = timestamp_features(&s, 0, 2, 8.0).unwrap();
        assert_eq!(fd, 2);
        assert_eq!(f[0], 0.0, "sin at index 0");
        assert_eq!(f[1], 1.0, "cos at index 0");
        assert!((f[2] - (2.0 * std::f64::consts::PI / 8.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn hint_must_be_positive_for_clockless_series() {
        let s = Series::new("raw", 1, vec![0.0; 4], None, Freq::None).unwrap();
        assert!(timestamp_features(&s, 0, 2, 0.0).is_err());
    }
}
