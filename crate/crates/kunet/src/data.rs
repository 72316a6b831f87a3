//! CSV ingestion, chronological splits, sliding windows, and
//! channel-independent sample construction.

use std::ops::Range;
use std::path::Path;

use kunet_core::normalize::{self, NormMode, NormState};
use kunet_core::rng::Rng;

use crate::error::{io_err, Error, Result};

/// A multivariate series: `rows x channels` values on a uniform grid with
/// strictly increasing timestamps. Immutable after ingestion.
#[derive(Debug, Clone)]
pub struct SeriesTable {
    pub timestamps: Vec<String>,
    /// Row-major `rows x channels`.
    pub values: Vec<f64>,
    pub channels: Vec<String>,
}

impl SeriesTable {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channel_count() + channel]
    }

    /// Univariate view keeping only the named channel.
    pub fn select_channel(&self, name: &str) -> Result<SeriesTable> {
        let idx = self
            .channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("channel {name:?} not in {:?}", self.channels)))?;
        let m = self.channel_count();
        Ok(SeriesTable {
            timestamps: self.timestamps.clone(),
            values: self.values.iter().skip(idx).step_by(m).copied().collect(),
            channels: vec![name.to_string()],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestReport {
    pub rows: usize,
    pub channels: usize,
    pub rejected_rows: usize,
    pub forward_filled: usize,
}

impl IngestReport {
    pub fn render(&self) -> String {
        format!(
            "rows={} channels={} rejected_rows={} forward_filled={}",
            self.rows, self.channels, self.rejected_rows, self.forward_filled
        )
    }
}

/// What to do with a row that has empty cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPolicy {
    Reject,
    ForwardFill,
}

/// Order key for ISO-like timestamps: the sequence of digit runs. Handles
/// both zero-padded and unpadded fields.
fn timestamp_key(ts: &str) -> Vec<u64> {
    let mut key = Vec::new();
    let mut current: Option<u64> = None;
    for ch in ts.chars() {
        if let Some(d) = ch.to_digit(10) {
            current = Some(current.unwrap_or(0) * 10 + d as u64);
        } else if let Some(v) = current.take() {
            key.push(v);
        }
    }
    if let Some(v) = current {
        key.push(v);
    }
    key
}

/// Load a CSV with a header row, first column timestamp, remaining columns
/// numeric channels.
pub fn load_csv(path: &Path, gaps: GapPolicy) -> Result<(SeriesTable, IngestReport)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let mut cols = header.split(',').map(str::trim);
    let _ts_name = cols
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty header", path.display())))?;
    let channels: Vec<String> = cols.map(|c| c.to_string()).collect();
    if channels.is_empty() {
        return Err(Error::Data(format!("{}: no value columns", path.display())));
    }

    let m = channels.len();
    let mut timestamps = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut rejected = 0usize;
    let mut filled = 0usize;
    let mut last_key: Option<Vec<u64>> = None;

    for (line_idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row_no = line_idx + 1; // 1-based, header included
        let mut fields = line.split(',').map(str::trim);
        let ts = fields
            .next()
            .ok_or_else(|| Error::Data(format!("{}: row {row_no} empty", path.display())))?;
        let cells: Vec<&str> = fields.collect();
        if cells.len() != m {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                row: row_no,
                column: "-".into(),
                message: format!("expected {m} value columns, found {}", cells.len()),
            });
        }
        let mut row = Vec::with_capacity(m);
        let mut has_gap = false;
        for (ci, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                has_gap = true;
                row.push(f64::NAN);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) => row.push(v),
                Err(_) => {
                    return Err(Error::Ingest {
                        path: path.to_path_buf(),
                        row: row_no,
                        column: channels[ci].clone(),
                        message: format!("cannot parse {cell:?} as a number"),
                    })
                }
            }
        }
        if has_gap {
            match gaps {
                GapPolicy::Reject => {
                    rejected += 1;
                    continue;
                }
                GapPolicy::ForwardFill => {
                    if values.is_empty() {
                        return Err(Error::Ingest {
                            path: path.to_path_buf(),
                            row: row_no,
                            column: "-".into(),
                            message: "gap in the first row cannot be forward-filled".into(),
                        });
                    }
                    let prev = values.len() - m;
                    for (ci, v) in row.iter_mut().enumerate() {
                        if v.is_nan() {
                            *v = values[prev + ci];
                            filled += 1;
                        }
                    }
                }
            }
        }
        let key = timestamp_key(ts);
        if let Some(prev) = &last_key {
            if key <= *prev {
                return Err(Error::Data(format!(
                    "{}: timestamps not strictly increasing at row {row_no} ({ts:?})",
                    path.display()
                )));
            }
        }
        last_key = Some(key);
        timestamps.push(ts.to_string());
        values.extend(row);
    }

    let report = IngestReport {
        rows: timestamps.len(),
        channels: m,
        rejected_rows: rejected,
        forward_filled: filled,
    };
    Ok((SeriesTable { timestamps, values, channels }, report))
}

/// Chronological split scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScheme {
    /// 12 / 4 / 4 months at a fixed number of rows per 30-day month.
    EttMonths { rows_per_month: usize },
    Ratio { train: f64, val: f64, test: f64 },
}

impl SplitScheme {
    pub fn ett_hourly() -> Self {
        SplitScheme::EttMonths { rows_per_month: 30 * 24 }
    }

    pub fn ett_quarter_hourly() -> Self {
        SplitScheme::EttMonths { rows_per_month: 30 * 96 }
    }

    pub fn standard_ratio() -> Self {
        SplitScheme::Ratio { train: 0.7, val: 0.1, test: 0.2 }
    }
}

/// Core row ranges of the three splits. Validation and test windows may
/// read `lookback` rows of input context from the preceding split; targets
/// always stay inside the core range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub lookback: usize,
}

impl SplitRanges {
    pub fn train_segment(&self) -> Range<usize> {
        self.train.clone()
    }

    pub fn val_segment(&self) -> Range<usize> {
        self.val.start.saturating_sub(self.lookback)..self.val.end
    }

    pub fn test_segment(&self) -> Range<usize> {
        self.test.start.saturating_sub(self.lookback)..self.test.end
    }
}

pub fn split(table: &SeriesTable, scheme: &SplitScheme, lookback: usize) -> Result<SplitRanges> {
    let n = table.rows();
    let (n_train, n_val, n_test) = match scheme {
        SplitScheme::EttMonths { rows_per_month } => {
            (12 * rows_per_month, 4 * rows_per_month, 4 * rows_per_month)
        }
        SplitScheme::Ratio { train, val, test } => {
            if !(train > &0.0 && val >= &0.0 && test > &0.0 && train + val + test <= 1.0 + 1e-9) {
                return Err(Error::Config(format!(
                    "split ratios ({train}, {val}, {test}) must be positive and sum to <= 1"
                )));
            }
            let n_train = (n as f64 * train) as usize;
            let n_test = (n as f64 * test) as usize;
            let n_val = n - n_train - n_test;
            (n_train, n_val, n_test)
        }
    };
    if n_train + n_val + n_test > n || n_train == 0 || n_test == 0 {
        return Err(Error::Data(format!(
            "table of {n} rows is shorter than the split scheme ({n_train}/{n_val}/{n_test})"
        )));
    }
    Ok(SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n_train + n_val + n_test,
        lookback,
    })
}

/// Start offsets of every window whose input rows `[t, t+L)` and target
/// rows `[t+L, t+L+T)` fit inside `segment`.
pub fn window_starts(segment: Range<usize>, lookback: usize, horizon: usize, stride: usize) -> Vec<usize> {
    let len = segment.end.saturating_sub(segment.start);
    if len < lookback + horizon || stride == 0 {
        return Vec::new();
    }
    (0..=(len - lookback - horizon))
        .step_by(stride)
        .map(|o| segment.start + o)
        .collect()
}

/// Expected window count for a segment of `len` rows.
pub fn window_count(len: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    if len < lookback + horizon || stride == 0 {
        0
    } else {
        (len - lookback - horizon) / stride + 1
    }
}

/// One normalized training/evaluation sample.
#[derive(Debug, Clone)]
pub struct Window {
    /// Source row of the first input value.
    pub start: usize,
    /// Normalized input, `lookback x channels`.
    pub input: Vec<f64>,
    /// Target transformed with the input window's statistics.
    pub target: Vec<f64>,
    /// Untouched target values for metric computation.
    pub raw_target: Vec<f64>,
    pub norm: NormState,
}

/// All windows of one split segment, ready for batching.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub lookback: usize,
    pub horizon: usize,
    /// Channels per sample (1 in channel-independent mode).
    pub channels: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Slice a segment into normalized windows. With `channel_independent` and
/// a multichannel table, every (window, channel) pair becomes its own
/// univariate sample, ordered (start0 ch0, start0 ch1, ..., start1 ch0, ...).
pub fn build_window_set(
    table: &SeriesTable,
    segment: Range<usize>,
    lookback: usize,
    horizon: usize,
    stride: usize,
    mode: NormMode,
    channel_independent: bool,
) -> Result<WindowSet> {
    let m = table.channel_count();
    let starts = window_starts(segment, lookback, horizon, stride);
    let mut windows = Vec::new();
    for &start in &starts {
        let input_rows = &table.values[start * m..(start + lookback) * m];
        let target_rows = &table.values[(start + lookback) * m..(start + lookback + horizon) * m];
        if channel_independent && m > 1 {
            for c in 0..m {
                let input: Vec<f64> = input_rows.iter().skip(c).step_by(m).copied().collect();
                let raw_target: Vec<f64> = target_rows.iter().skip(c).step_by(m).copied().collect();
                let (norm_input, state) = normalize::apply(&input, 1, mode)?;
                let target = normalize::transform(&state, &raw_target);
                windows.push(Window { start, input: norm_input, target, raw_target, norm: state });
            }
        } else {
            let (norm_input, state) = normalize::apply(input_rows, m, mode)?;
            let target = normalize::transform(&state, target_rows);
            windows.push(Window {
                start,
                input: norm_input,
                target,
                raw_target: target_rows.to_vec(),
                norm: state,
            });
        }
    }
    Ok(WindowSet {
        windows,
        lookback,
        horizon,
        channels: if channel_independent && m > 1 { 1 } else { m },
    })
}

/// `(B, L, M) -> (B*M, L, 1)`: every channel becomes an independent sample,
/// ordered (b0 c0, b0 c1, ..., b1 c0, ...).
pub fn flatten_channels(data: &[f64], batch: usize, len: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        for c in 0..channels {
            for t in 0..len {
                out[(b * channels + c) * len + t] = data[(b * len + t) * channels + c];
            }
        }
    }
    out
}

/// Exact inverse of [`flatten_channels`].
pub fn unflatten_channels(data: &[f64], batch: usize, len: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        for c in 0..channels {
            for t in 0..len {
                out[(b * len + t) * channels + c] = data[(b * channels + c) * len + t];
            }
        }
    }
    out
}

/// Deterministic surrogate with daily and weekly periodicity plus a slow
/// trend and mild noise, in the spirit of the hourly electricity-transformer
/// benchmark tables. The last channel is named "OT".
pub fn synthetic_series(rows: usize, channels: usize, seed: u64) -> SeriesTable {
    let mut rng = Rng::new(seed);
    let names: Vec<String> = (0..channels)
        .map(|i| if i == channels - 1 { "OT".to_string() } else { format!("c{i}") })
        .collect();
    let phase: Vec<f64> = (0..channels).map(|_| rng.uniform(0.0, 24.0)).collect();
    let amp_day: Vec<f64> = (0..channels).map(|_| rng.uniform(0.6, 1.4)).collect();
    let amp_week: Vec<f64> = (0..channels).map(|_| rng.uniform(0.2, 0.6)).collect();
    let base: Vec<f64> = (0..channels).map(|_| rng.uniform(-2.0, 8.0)).collect();
    let tau = std::f64::consts::TAU;
    let mut values = Vec::with_capacity(rows * channels);
    let mut timestamps = Vec::with_capacity(rows);
    for t in 0..rows {
        timestamps.push(format!("{t:08}"));
        for c in 0..channels {
            let x = t as f64 + phase[c];
            let v = base[c]
                + amp_day[c] * (tau * x / 24.0).sin()
                + amp_week[c] * (tau * x / 168.0).sin()
                + 0.0005 * t as f64
                + rng.uniform(-0.05, 0.05);
            values.push(v);
        }
    }
    SeriesTable { timestamps, values, channels: names }
}
