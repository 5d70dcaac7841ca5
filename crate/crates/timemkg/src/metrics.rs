//! Forecast and classification metrics.
//!
//! Scaled metrics follow the M4 conventions: the scaled error divides by
//! the in-sample seasonal-naive MAE, and the overall weighted average
//! compares against the seasonal-naive forecast itself. Degenerate
//! denominators surface as absent metrics, never as infinities.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonMetrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    /// In percent, `200 * mean(|p-t| / (|p|+|t|))`; at most 200.
    pub smape: f64,
    pub mase: Option<f64>,
    pub owa: Option<f64>,
    pub accuracy: Option<f64>,
    pub per_horizon: Vec<HorizonMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mse": self.mse,
            "mae": self.mae,
            "smape": self.smape,
            "mase": self.mase,
            "owa": self.owa,
            "accuracy": self.accuracy,
            "per_horizon": self.per_horizon.iter().map(|h| {
                serde_json::json!({"mse": h.mse, "mae": h.mae})
            }).collect::<Vec<_>>(),
        })
    }
}

/// In-sample reference for scaled metrics: the original-scale series the
/// model trained on, plus the seasonal period of the naive forecaster.
#[derive(Debug, Clone)]
pub struct NaiveRef<'a> {
    /// Row-major `rows x n_vars`, original scale.
    pub insample: &'a [f64],
    pub rows: usize,
    pub n_vars: usize,
    pub period: usize,
}

impl<'a> NaiveRef<'a> {
    /// Seasonal-naive forecast for `horizon` steps past the in-sample end:
    /// step h repeats the last observed value one whole period back.
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        let m = self.period.max(1);
        let (rows, n) = (self.rows, self.n_vars);
        let mut out = vec![0.0; horizon * n];
        for h in 1..=horizon {
            let k = h.div_ceil(m);
            // 1-based source index rows + h - k*m, clamped into range.
            let src = (rows as i64 + h as i64 - (k * m) as i64 - 1).clamp(0, rows as i64 - 1)
                as usize;
            for j in 0..n {
                out[(h - 1) * n + j] = self.insample[src * n + j];
            }
        }
        out
    }

    /// Per-variable in-sample seasonal-naive MAE (the MASE denominator).
    fn scale(&self) -> Vec<f64> {
        let m = self.period.max(1);
        let (rows, n) = (self.rows, self.n_vars);
        let mut out = vec![0.0; n];
        if rows <= m {
            return out;
        }
        for j in 0..n {
            let mut acc = 0.0;
            for t in m..rows {
                acc += (self.insample[t * n + j] - self.insample[(t - m) * n + j]).abs();
            }
            out[j] = acc / (rows - m) as f64;
        }
        out
    }
}

fn smape_of(pred: &[f64], truth: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let denom = p.abs() + t.abs();
        if denom > 0.0 {
            acc += (p - t).abs() / denom;
        }
    }
    200.0 * acc / pred.len().max(1) as f64
}

/// Per-variable MAE divided by the in-sample naive scale, averaged over
/// variables. Any zero scale makes the metric unavailable.
fn mase_of(pred: &[f64], truth: &[f64], n_vars: usize, scale: &[f64]) -> Option<f64> {
    if scale.iter().any(|&s| s <= 0.0) {
        return None;
    }
    let rows = pred.len() / n_vars;
    let mut total = 0.0;
    for j in 0..n_vars {
        let mut mae = 0.0;
        for r in 0..rows {
            mae += (pred[r * n_vars + j] - truth[r * n_vars + j]).abs();
        }
        mae /= rows.max(1) as f64;
        total += mae / scale[j];
    }
    Some(total / n_vars as f64)
}

/// Evaluate an `L x N` forecast against truth of the same shape, in the
/// original data scale.
pub fn evaluate_forecast(
    pred: &[f64],
    truth: &[f64],
    horizon: usize,
    n_vars: usize,
    naive: &NaiveRef<'_>,
) -> Result<MetricsReport> {
    if pred.len() != truth.len() || pred.len() != horizon * n_vars || naive.n_vars != n_vars {
        return Err(Error::shape(
            "evaluate_forecast",
            format!(
                "pred {}, truth {}, expected {}x{}",
                pred.len(),
                truth.len(),
                horizon,
                n_vars
            ),
        ));
    }
    let mut report = accumulate_forecast_metrics(pred, truth, horizon, n_vars);
    attach_scaled_metrics(&mut report, pred, truth, n_vars, naive, horizon);
    Ok(report)
}

/// MSE / MAE / SMAPE / per-horizon over stacked `L x N` blocks. `pred` may
/// hold several windows back to back; `horizon` is the per-window L.
pub(crate) fn accumulate_forecast_metrics(
    pred: &[f64],
    truth: &[f64],
    horizon: usize,
    n_vars: usize,
) -> MetricsReport {
    let total = pred.len().max(1) as f64;
    let mut mse = 0.0;
    let mut mae = 0.0;
    let mut per_h = vec![HorizonMetrics { mse: 0.0, mae: 0.0 }; horizon];
    let mut per_h_count = vec![0usize; horizon];
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        let e = p - t;
        mse += e * e;
        mae += e.abs();
        let h = (i / n_vars) % horizon.max(1);
        per_h[h].mse += e * e;
        per_h[h].mae += e.abs();
        per_h_count[h] += 1;
    }
    for (h, count) in per_h.iter_mut().zip(per_h_count) {
        let c = count.max(1) as f64;
        h.mse /= c;
        h.mae /= c;
    }
    MetricsReport {
        mse: mse / total,
        mae: mae / total,
        smape: smape_of(pred, truth),
        mase: None,
        owa: None,
        accuracy: None,
        per_horizon: per_h,
    }
}

pub(crate) fn attach_scaled_metrics(
    report: &mut MetricsReport,
    pred: &[f64],
    truth: &[f64],
    n_vars: usize,
    naive: &NaiveRef<'_>,
    horizon: usize,
) {
    let scale = naive.scale();
    report.mase = mase_of(pred, truth, n_vars, &scale);
    // The naive forecast repeats per window when several are stacked.
    let windows = pred.len() / (horizon * n_vars).max(1);
    let one = naive.forecast(horizon);
    let naive_pred: Vec<f64> = one
        .iter()
        .copied()
        .cycle()
        .take(one.len() * windows)
        .collect();
    let naive_smape = smape_of(&naive_pred, truth);
    let naive_mase = mase_of(&naive_pred, truth, n_vars, &scale);
    report.owa = match (report.mase, naive_mase) {
        (Some(m), Some(nm)) if nm > 0.0 && naive_smape > 0.0 => {
            Some(0.5 * (report.smape / naive_smape + m / nm))
        }
        _ => None,
    };
}

/// Fraction of samples where the highest logit names the label. Ties go to
/// the lowest class index.
pub fn evaluate_classification(logits: &[Vec<f64>], labels: &[usize]) -> Result<MetricsReport> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::EmptySet);
    }
    let mut correct = 0usize;
    for (row, &label) in logits.iter().zip(labels) {
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(MetricsReport {
        accuracy: Some(correct as f64 / labels.len() as f64),
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::SplitMix64;

    fn ref_series(rows: usize, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64(seed);
        (0..rows * n).map(|_| rng.next_f64() * 4.0 - 2.0).collect()
    }

    #[test]
    fn perfect_forecast_zeroes_everything() {
        let insample = ref_series(20, 2, 1);
        let naive = NaiveRef {
            insample: &insample,
            rows: 20,
            n_vars: 2,
            period: 1,
        };
        let truth = ref_series(3, 2, 2); // L=3 rows of N=2
        let r = evaluate_forecast(&truth, &truth, 3, 2, &naive).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.smape, 0.0);
        assert_eq!(r.mase, Some(0.0));
        assert_eq!(r.owa, Some(0.0));
    }

    #[test]
    fn hand_case_single_point() {
        let insample = ref_series(10, 1, 3);
        let naive = NaiveRef {
            insample: &insample,
            rows: 10,
            n_vars: 1,
            period: 1,
        };
        let r = evaluate_forecast(&[2.0], &[1.0], 1, 1, &naive).unwrap();
        assert!((r.mse - 1.0).abs() < 1e-12);
        assert!((r.mae - 1.0).abs() < 1e-12);
        assert!((r.smape - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_insample_disables_scaled_metrics() {
        let insample = vec![5.0; 12];
        let naive = NaiveRef {
            insample: &insample,
            rows: 12,
            n_vars: 1,
            period: 1,
        };
        let r = evaluate_forecast(&[5.5, 5.5], &[5.0, 5.0], 2, 1, &naive).unwrap();
        assert!(r.mase.is_none());
        assert!(r.owa.is_none());
        assert!(r.mse.is_finite());
    }

    #[test]
    fn smape_caps_at_200() {
        let insample = ref_series(10, 1, 4);
        let naive = NaiveRef {
            insample: &insample,
            rows: 10,
            n_vars: 1,
            period: 1,
        };
        // Opposite signs: each term contributes the maximum 2.0.
        let r = evaluate_forecast(&[1.0, -3.0], &[-1.0, 3.0], 2, 1, &naive).unwrap();
        assert!((r.smape - 200.0).abs() < 1e-9);
    }

    #[test]
    fn smape_zero_over_zero_counts_as_zero() {
        let insample = ref_series(10, 1, 5);
        let naive = NaiveRef {
            insample: &insample,
            rows: 10,
            n_vars: 1,
            period: 1,
        };
        let r = evaluate_forecast(&[0.0, 1.0], &[0.0, 1.0], 2, 1, &naive).unwrap();
        assert_eq!(r.smape, 0.0);
    }

    #[test]
    fn seasonal_naive_repeats_last_period() {
        let insample: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // rows=6, n=1
        let naive = NaiveRef {
            insample: &insample,
            rows: 6,
            n_vars: 1,
            period: 2,
        };
        // Last period is [5, 6]; horizon 4 repeats it.
        assert_eq!(naive.forecast(4), vec![5.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn mase_one_when_matching_naive_error() {
        // In-sample differences are all 2, so scale = 2. A forecast off by
        // 2 everywhere has MASE exactly 1.
        let insample: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let naive = NaiveRef {
            insample: &insample,
            rows: 10,
            n_vars: 1,
            period: 1,
        };
        let truth = vec![20.0, 22.0];
        let pred = vec![22.0, 24.0];
        let r = evaluate_forecast(&pred, &truth, 2, 1, &naive).unwrap();
        assert!((r.mase.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mae_bounded_by_rmse() {
        // Jensen: MAE <= sqrt(MSE) always.
        for seed in 0..20 {
            let insample = ref_series(15, 3, seed + 100);
            let naive = NaiveRef {
                insample: &insample,
                rows: 15,
                n_vars: 3,
                period: 1,
            };
            let pred = ref_series(2, 3, seed);
            let truth = ref_series(2, 3, seed + 50);
            let r = evaluate_forecast(&pred, &truth, 2, 3, &naive).unwrap();
            assert!(r.mae <= r.mse.sqrt() + 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let insample = ref_series(10, 2, 7);
        let naive = NaiveRef {
            insample: &insample,
            rows: 10,
            n_vars: 2,
            period: 1,
        };
        assert!(evaluate_forecast(&[1.0, 2.0], &[1.0], 1, 2, &naive).is_err());
    }

    #[test]
    fn classification_accuracy_counts() {
        let logits = vec![
            vec![2.0, 1.0], // -> 0
            vec![0.0, 3.0], // -> 1
            vec![5.0, 0.0], // -> 0
            vec![0.1, 0.2], // -> 1
        ];
        let r = evaluate_classification(&logits, &[0, 1, 1, 1]).unwrap();
        assert_eq!(r.accuracy, Some(0.75));
        let all = evaluate_classification(&logits, &[0, 1, 0, 1]).unwrap();
        assert_eq!(all.accuracy, Some(1.0));
        let none = evaluate_classification(&logits, &[1, 0, 1, 0]).unwrap();
        assert_eq!(none.accuracy, Some(0.0));
    }

    #[test]
    fn classification_ties_pick_lowest_index() {
        let logits = vec![vec![1.0, 1.0, 1.0]];
        let r = evaluate_classification(&logits, &[0]).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        let r = evaluate_classification(&logits, &[1]).unwrap();
        assert_eq!(r.accuracy, Some(0.0));
    }

    #[test]
    fn empty_classification_set_errors() {
        assert!(matches!(
            evaluate_classification(&[], &[]),
            Err(Error::EmptySet)
        ));
    }
}
