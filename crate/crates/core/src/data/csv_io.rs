//! CSV ingestion. Header row optional; an optional date column (ISO-8601 or
//! `YYYY-MM-DD HH:MM:SS`) is named via flag; every remaining column is a
//! numeric channel. Missing or non-finite cells are hard errors — imputation
//! would silently corrupt the autocorrelation downstream.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDateTime;

use crate::data::{Freq, Series};
use crate::error::{Error, Result};

const DATE_FORMATS: &[&str] = &["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d"];

fn parse_date(s: &str) -> Option<NaiveDateTime> {
    for fmt in DATE_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
        if let Ok(d) = chrono::NaiveDate::parse_from_str(s, fmt) {
            return Some(d.and_hms_opt(0, 0, 0).unwrap());
        }
    }
    None
}

fn parse_cell(s: &str, line: usize, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("row {line}: cannot parse '{s}' in column '{col}'")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("row {line}: non-finite value '{s}' in column '{col}'")));
    }
    Ok(v)
}

fn infer_freq(timestamps: &[NaiveDateTime]) -> Freq {
    if timestamps.len() < 2 {
        return Freq::None;
    }
    let delta = (timestamps[1] - timestamps[0]).num_seconds();
    if timestamps.windows(2).any(|w| (w[1] - w[0]).num_seconds() != delta) {
        return Freq::None;
    }
    match delta {
        600 => Freq::Min10,
        900 => Freq::Min15,
        3600 => Freq::Hourly,
        86400 => Freq::Daily,
        604800 => Freq::Weekly,
        _ => Freq::None,
    }
}

/// Loads a CSV file into a [`Series`].
///
/// When `date_col` or `value_cols` name columns, the file must carry a header
/// row. Without either, a header is detected by whether the first row parses
/// as numbers. Rows without a date column get a synthetic integer clock
/// (their row index) and frequency `none`.
pub fn load_csv(path: &Path, date_col: Option<&str>, value_cols: Option<&[String]>) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("row {}: {e}", idx + 1)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }

    let named = date_col.is_some() || value_cols.is_some();
    let first_is_numeric = records[0].iter().all(|f| f.trim().parse::<f64>().is_ok());
    let has_header = named || !first_is_numeric;
    if named && first_is_numeric {
        return Err(Error::Data(
            "named columns requested but the file has no header row".into(),
        ));
    }

    let header: Vec<String> = if has_header {
        records[0].iter().map(|s| s.to_string()).collect()
    } else {
        (0..records[0].len()).map(|i| format!("col{i}")).collect()
    };
    let data_rows = &records[if has_header { 1 } else { 0 }..];
    if data_rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let date_idx = match date_col {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("no column named '{name}'")))?,
        ),
        None => None,
    };
    let value_idx: Vec<usize> = match value_cols {
        Some(names) => names
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Data(format!("no column named '{name}'")))
            })
            .collect::<Result<_>>()?,
        None => (0..header.len()).filter(|i| Some(*i) != date_idx).collect(),
    };
    if value_idx.is_empty() {
        return Err(Error::Data("no value columns".into()));
    }

    let mut values = Vec::with_capacity(data_rows.len() * value_idx.len());
    let mut timestamps = date_idx.map(|_| Vec::with_capacity(data_rows.len()));
    for (r, rec) in data_rows.iter().enumerate() {
        let line = r + if has_header { 2 } else { 1 };
        if let Some(di) = date_idx {
            let cell = rec.get(di).ok_or_else(|| Error::Data(format!("row {line}: short row")))?;
            let ts = parse_date(cell)
                .ok_or_else(|| Error::Data(format!("row {line}: cannot parse date '{cell}'")))?;
            timestamps.as_mut().unwrap().push(ts);
        }
        for &vi in &value_idx {
            let cell = rec.get(vi).ok_or_else(|| Error::Data(format!("row {line}: short row")))?;
            values.push(parse_cell(cell, line, &header[vi])?);
        }
    }

    let freq = timestamps.as_deref().map(infer_freq).unwrap_or(Freq::None);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Series::new(name, value_idx.len(), values, timestamps, freq)
}

/// Writes a single-channel series as a headered one-column CSV.
pub fn write_series_csv(values: &[f64], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "value")?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    Ok(())
}
