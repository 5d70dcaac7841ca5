//! CSV loading, chronological splitting, sliding windows, and per-variable
//! normalization.
//!
//! Normalization statistics always come from the train split alone and are
//! applied unchanged to validation and test windows. Zero-variance
//! variables are flagged and normalized with std = 1 instead of erroring.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multivariate series as loaded from disk: `rows x n_vars` row-major,
/// with optional timestamps (kept for reports only) and optional integer
/// class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    pub variables: Vec<String>,
    pub values: Vec<f64>,
    pub rows: usize,
    pub timestamps: Option<Vec<String>>,
    pub labels: Option<Vec<usize>>,
}

impl SeriesData {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn value(&self, row: usize, var: usize) -> f64 {
        self.values[row * self.n_vars() + var]
    }
}

const TIMESTAMP_HEADERS: [&str; 4] = ["", "date", "time", "timestamp"];

/// Read a CSV whose header row names the variables. The first column is
/// treated as a timestamp when its header says so or its first value does
/// not parse as a number. `label_column`, when given, is pulled out as
/// integer class labels instead of a series variable.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<SeriesData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(Error::parse(1, "empty header row"));
    }

    let records: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(0, e.to_string()))?;

    let first_is_timestamp = TIMESTAMP_HEADERS.contains(&headers[0].to_lowercase().as_str())
        || records
            .first()
            .and_then(|r| r.get(0))
            .is_some_and(|v| v.parse::<f64>().is_err());

    let mut var_cols: Vec<usize> = Vec::new();
    let mut label_col = None;
    for (i, h) in headers.iter().enumerate() {
        if i == 0 && first_is_timestamp {
            continue;
        }
        if label_column.is_some_and(|lc| lc == h) {
            label_col = Some(i);
            continue;
        }
        var_cols.push(i);
    }
    if label_column.is_some() && label_col.is_none() {
        return Err(Error::Config(format!(
            "label column `{}` not found in header",
            label_column.unwrap_or_default()
        )));
    }
    if var_cols.is_empty() {
        return Err(Error::parse(1, "no variable columns in header"));
    }

    let variables: Vec<String> = var_cols.iter().map(|&i| headers[i].clone()).collect();
    let mut values = Vec::with_capacity(records.len() * var_cols.len());
    let mut timestamps = first_is_timestamp.then(Vec::new);
    let mut labels = label_col.map(|_| Vec::new());
    for (row_idx, rec) in records.iter().enumerate() {
        let line = row_idx + 2; // header is line 1
        if let Some(ts) = timestamps.as_mut() {
            ts.push(rec.get(0).unwrap_or_default().to_string());
        }
        for &col in &var_cols {
            let raw = rec
                .get(col)
                .ok_or_else(|| Error::parse(line, "missing field"))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(line, format!("`{raw}` is not a number")))?;
            values.push(v);
        }
        if let (Some(labels), Some(col)) = (labels.as_mut(), label_col) {
            let raw = rec
                .get(col)
                .ok_or_else(|| Error::parse(line, "missing label field"))?;
            let l: usize = raw
                .parse()
                .map_err(|_| Error::parse(line, format!("`{raw}` is not a class index")))?;
            labels.push(l);
        }
    }
    Ok(SeriesData {
        variables,
        rows: records.len(),
        values,
        timestamps,
        labels,
    })
}

pub fn save_csv(path: &Path, data: &SeriesData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = Vec::new();
    if data.timestamps.is_some() {
        header.push("timestamp".to_string());
    }
    header.extend(data.variables.iter().cloned());
    if data.labels.is_some() {
        header.push("label".to_string());
    }
    w.write_record(&header)?;
    for r in 0..data.rows {
        let mut rec = Vec::new();
        if let Some(ts) = &data.timestamps {
            rec.push(ts[r].clone());
        }
        for c in 0..data.n_vars() {
            rec.push(format_value(data.value(r, c)));
        }
        if let Some(labels) = &data.labels {
            rec.push(labels[r].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal that round-trips the f64 exactly.
fn format_value(v: f64) -> String {
    let mut buf = ryu_style(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_style(v: f64) -> String {
    // `{}` on f64 already prints the shortest representation that parses
    // back to the same bits.
    format!("{v}")
}

/// Per-variable z-score statistics, computed on the train split only.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Variables whose train-split variance was zero; their std is pinned
    /// to 1 so normalization is a pure shift.
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn compute(values: &[f64], rows: usize, n_vars: usize) -> Self {
        let mut mean = vec![0.0; n_vars];
        let mut std = vec![0.0; n_vars];
        let mut constant = vec![false; n_vars];
        for j in 0..n_vars {
            let mut m = 0.0;
            for r in 0..rows {
                m += values[r * n_vars + j];
            }
            m /= rows.max(1) as f64;
            let mut var = 0.0;
            for r in 0..rows {
                let d = values[r * n_vars + j] - m;
                var += d * d;
            }
            var /= rows.max(1) as f64;
            mean[j] = m;
            if var > 0.0 {
                std[j] = var.sqrt();
            } else {
                std[j] = 1.0;
                constant[j] = true;
            }
        }
        Self { mean, std, constant }
    }

    pub fn normalize_in_place(&self, values: &mut [f64]) {
        let n = self.mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            let j = i % n;
            *v = (*v - self.mean[j]) / self.std[j];
        }
    }

    pub fn denormalize_in_place(&self, values: &mut [f64]) {
        let n = self.mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            let j = i % n;
            *v = *v * self.std[j] + self.mean[j];
        }
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        self.denormalize_in_place(&mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Either an `L x N` future block or a class label.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowTarget {
    Forecast(Vec<f64>),
    Label(usize),
}

/// One training example: normalized `T x N` history plus target.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub history: Vec<f64>,
    pub target: WindowTarget,
}

impl Window {
    pub fn history_tensor(&self, t: usize, n: usize) -> Tensor {
        Tensor::new(&[t, n], self.history.clone()).expect("window shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub variables: Vec<String>,
    pub history_len: usize,
    /// 0 for classification datasets.
    pub horizon: usize,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    pub stats: NormStats,
    /// Names of zero-variance variables (normalized with std = 1).
    pub degenerate: Vec<String>,
    /// Original-scale train-split series, kept as the in-sample reference
    /// for scaled metrics.
    pub train_series: Vec<f64>,
    pub train_rows: usize,
}

impl WindowedDataset {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn split(&self, s: Split) -> &[Window] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Cut stride-1 windows inside chronological splits. `horizon` > 0 builds
/// forecast targets; `horizon` == 0 requires labels and attaches the class
/// at each window's last history row.
pub fn make_windows(
    data: &SeriesData,
    history_len: usize,
    horizon: usize,
    fractions: (f64, f64, f64),
) -> Result<WindowedDataset> {
    let n = data.n_vars();
    let need = history_len + horizon;
    if data.rows < need {
        return Err(Error::TooShort {
            need,
            got: data.rows,
        });
    }
    let (f_train, f_val, f_test) = fractions;
    if f_train <= 0.0 || f_val < 0.0 || f_test < 0.0 || (f_train + f_val + f_test - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions ({f_train}, {f_val}, {f_test}) must be nonnegative and sum to 1"
        )));
    }
    if horizon == 0 && data.labels.is_none() {
        return Err(Error::Config(
            "classification windows need a label column".into(),
        ));
    }

    let train_rows = ((data.rows as f64) * f_train).floor() as usize;
    let val_rows = ((data.rows as f64) * f_val).floor() as usize;
    let test_rows = data.rows - train_rows - val_rows;
    if train_rows < need {
        return Err(Error::TooShort {
            need,
            got: train_rows,
        });
    }

    let train_series: Vec<f64> = data.values[..train_rows * n].to_vec();
    let stats = NormStats::compute(&train_series, train_rows, n);
    let degenerate: Vec<String> = data
        .variables
        .iter()
        .zip(&stats.constant)
        .filter(|(_, &c)| c)
        .map(|(v, _)| v.clone())
        .collect();

    let mut normalized = data.values.clone();
    stats.normalize_in_place(&mut normalized);

    let cut = |start: usize, rows: usize| -> Vec<Window> {
        if rows < need {
            return Vec::new();
        }
        (0..rows - need + 1)
            .map(|off| {
                let base = start + off;
                let history =
                    normalized[base * n..(base + history_len) * n].to_vec();
                let target = if horizon > 0 {
                    WindowTarget::Forecast(
                        normalized[(base + history_len) * n..(base + need) * n].to_vec(),
                    )
                } else {
                    let labels = data.labels.as_ref().expect("checked above");
                    WindowTarget::Label(labels[base + history_len - 1])
                };
                Window { history, target }
            })
            .collect()
    };

    Ok(WindowedDataset {
        variables: data.variables.clone(),
        history_len,
        horizon,
        train: cut(0, train_rows),
        val: cut(train_rows, val_rows),
        test: cut(train_rows + val_rows, test_rows),
        stats,
        degenerate,
        train_series,
        train_rows,
    })
}
