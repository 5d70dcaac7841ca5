//! Optimization loop and split evaluation.
//!
//! Single-threaded and fully seeded: two runs with the same seed produce
//! bitwise-identical parameters and losses. The loop minimizes MSE on
//! normalized forecast targets or cross-entropy on class labels, clips
//! the global gradient norm, and early-stops on a validation metric with
//! patience, restoring the best-validation parameters at the end.

use crate::data::{Split, WindowTarget, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    accumulate_forecast_metrics, attach_scaled_metrics, evaluate_classification, MetricsReport,
    NaiveRef,
};
use crate::model::{Model, TaskKind};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::util::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Validation checks without improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
    /// Steps between validation checks.
    pub val_every: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 200,
            batch_size: 16,
            patience: 0,
            val_every: 10,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// `(step, batch loss)` per optimizer step.
    pub loss_curve: Vec<(usize, f64)>,
    /// `(step, validation loss)` at each check, normalized space.
    pub val_curve: Vec<(usize, f64)>,
    pub best_val: Option<f64>,
    pub final_train_loss: f64,
    pub steps_run: usize,
}

fn window_loss(
    model: &Model,
    window_history: &Tensor,
    target: &WindowTarget,
    prompts: &[Tensor],
) -> Result<Tensor> {
    let out = model.forward(window_history, prompts)?;
    match (target, &model.cfg.task) {
        (WindowTarget::Forecast(t), TaskKind::Forecast { horizon }) => {
            let truth = Tensor::new(&[*horizon, model.cfg.n_vars], t.clone())?;
            out.output.mse_loss(&truth)
        }
        (WindowTarget::Label(l), TaskKind::Classify { .. }) => out.output.cross_entropy(*l),
        _ => Err(Error::Config(
            "window target does not match the model task".into(),
        )),
    }
}

/// Mean loss over a split, forward-only, in normalized space.
fn split_loss(model: &Model, dataset: &WindowedDataset, split: Split, prompts: &[Tensor]) -> Result<f64> {
    let windows = dataset.split(split);
    if windows.is_empty() {
        return Err(Error::EmptySet);
    }
    let (t, n) = (dataset.history_len, dataset.n_vars());
    let mut acc = 0.0;
    for w in windows {
        acc += window_loss(model, &w.history_tensor(t, n), &w.target, prompts)?.item();
    }
    Ok(acc / windows.len() as f64)
}

pub fn train(
    model: &Model,
    dataset: &WindowedDataset,
    prompts: &[Tensor],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if dataset.train.is_empty() {
        return Err(Error::EmptySet);
    }
    let params = model.named_params();
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            clip_norm: cfg.clip_norm,
            ..Default::default()
        },
        &params,
    );
    let (t, n) = (dataset.history_len, dataset.n_vars());
    let mut rng = SplitMix64(cfg.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut cursor = order.len(); // trigger shuffle on first step

    let has_val = !dataset.val.is_empty();
    let mut best_val: Option<f64> = None;
    let mut best_snapshot: Option<Vec<Vec<f64>>> = None;
    let mut stale_checks = 0usize;
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut val_curve = Vec::new();
    let mut final_train_loss = f64::NAN;
    let mut steps_run = 0;

    for step in 1..=cfg.steps {
        // Fisher-Yates reshuffle at each epoch boundary.
        if cursor >= order.len() {
            for i in (1..order.len()).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                order.swap(i, j);
            }
            cursor = 0;
        }
        let batch: Vec<usize> = order
            .iter()
            .copied()
            .skip(cursor)
            .take(cfg.batch_size.max(1))
            .collect();
        cursor += batch.len();

        model.tape.reset();
        model.zero_grad();
        let mut total: Option<Tensor> = None;
        for &idx in &batch {
            let w = &dataset.train[idx];
            let loss = window_loss(model, &w.history_tensor(t, n), &w.target, prompts)?;
            total = Some(match total {
                Some(acc) => acc.add(&loss)?,
                None => loss,
            });
        }
        let loss = total
            .expect("batch is nonempty")
            .mul_scalar(1.0 / batch.len() as f64);
        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(Error::Divergence { step });
        }
        model.tape.backward(&loss)?;
        opt.step(&params);
        loss_curve.push((step, loss_val));
        final_train_loss = loss_val;
        steps_run = step;

        if has_val && (step % cfg.val_every.max(1) == 0 || step == cfg.steps) {
            let val = split_loss(model, dataset, Split::Val, prompts)?;
            val_curve.push((step, val));
            let improved = best_val.is_none_or(|b| val < b);
            if improved {
                best_val = Some(val);
                best_snapshot = Some(params.iter().map(|(_, p)| p.to_vec()).collect());
                stale_checks = 0;
            } else {
                stale_checks += 1;
                if cfg.patience > 0 && stale_checks >= cfg.patience {
                    break;
                }
            }
        }
    }

    if let Some(snapshot) = best_snapshot {
        for ((_, p), data) in params.iter().zip(&snapshot) {
            p.set_data(data);
        }
    }
    model.tape.reset();

    Ok(TrainResult {
        loss_curve,
        val_curve,
        best_val,
        final_train_loss,
        steps_run,
    })
}

/// Forecast metrics over a split, in the original data scale. Predictions
/// and truths from every window are stacked before scoring; the scaled
/// metrics reference the train-split series as their in-sample history.
pub fn eval_forecast_split(
    model: &Model,
    dataset: &WindowedDataset,
    split: Split,
    prompts: &[Tensor],
    seasonal_period: usize,
) -> Result<MetricsReport> {
    let windows = dataset.split(split);
    if windows.is_empty() {
        return Err(Error::EmptySet);
    }
    let TaskKind::Forecast { horizon } = model.cfg.task else {
        return Err(Error::Config("model does not forecast".into()));
    };
    let (t, n) = (dataset.history_len, dataset.n_vars());
    let mut pred_all = Vec::with_capacity(windows.len() * horizon * n);
    let mut truth_all = Vec::with_capacity(windows.len() * horizon * n);
    for w in windows {
        let out = model.forward(&w.history_tensor(t, n), prompts)?;
        let WindowTarget::Forecast(target) = &w.target else {
            return Err(Error::Config("forecast split holds class labels".into()));
        };
        pred_all.extend(dataset.stats.denormalize(&out.output.to_vec()));
        truth_all.extend(dataset.stats.denormalize(target));
    }
    let naive = NaiveRef {
        insample: &dataset.train_series,
        rows: dataset.train_rows,
        n_vars: n,
        period: seasonal_period,
    };
    let mut report = accumulate_forecast_metrics(&pred_all, &truth_all, horizon, n);
    attach_scaled_metrics(&mut report, &pred_all, &truth_all, n, &naive, horizon);
    Ok(report)
}

/// Classification accuracy over a split.
pub fn eval_classification_split(
    model: &Model,
    dataset: &WindowedDataset,
    split: Split,
    prompts: &[Tensor],
) -> Result<MetricsReport> {
    let windows = dataset.split(split);
    if windows.is_empty() {
        return Err(Error::EmptySet);
    }
    let (t, n) = (dataset.history_len, dataset.n_vars());
    let mut logits = Vec::with_capacity(windows.len());
    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        let out = model.forward(&w.history_tensor(t, n), prompts)?;
        let WindowTarget::Label(l) = w.target else {
            return Err(Error::Config("classification split holds forecasts".into()));
        };
        logits.push(out.output.to_vec());
        labels.push(l);
    }
    evaluate_classification(&logits, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_windows;
    use crate::embed::{Embedder, EmbedderSpec, Tokenizer};
    use crate::model::{build_prompts, Model, ModelConfig};
    use crate::synth::{gen_synthetic, SeasonalTerm, SynthEdge, SynthSpec, SynthVariable};

    fn tiny_setup(seed: u64) -> (Model, WindowedDataset, Vec<Tensor>) {
        let spec = SynthSpec {
            variables: vec![
                SynthVariable {
                    name: "A".into(),
                    seasonal: Some(SeasonalTerm {
                        amplitude: 1.0,
                        period: 8.0,
                        phase: 0.3,
                    }),
                    tags: vec![],
                },
                SynthVariable {
                    name: "B".into(),
                    seasonal: None,
                    tags: vec![],
                },
            ],
            edges: vec![SynthEdge {
                src: "A".into(),
                dst: "B".into(),
                lag: 1,
                coef: 0.9,
                relation: "drives".into(),
            }],
            noise: 0.02,
            length: 21,
            seed: 5,
        };
        let out = gen_synthetic(&spec).unwrap();
        let dataset = make_windows(&out.data, 4, 2, (1.0, 0.0, 0.0)).unwrap();
        let mut cfg = ModelConfig::new(2, 4, TaskKind::Forecast { horizon: 2 });
        cfg.d = 8;
        cfg.d_ff = 16;
        cfg.depth = 1;
        cfg.n_heads = 2;
        cfg.l_max = 16;
        cfg.token_dim = 8;
        let model = Model::init(cfg.clone(), seed).unwrap();
        let prompts = build_prompts(
            &out.graph,
            &dataset.variables,
            "Explain the role of {variable}.",
            2,
            cfg.variant,
        )
        .unwrap();
        let embedder = Embedder::new(EmbedderSpec::DeterministicHash {
            dimension: cfg.token_dim,
            seed: 3,
        });
        let mut tok = Tokenizer::new();
        let matrices = prompts
            .iter()
            .map(|p| {
                let ids = tok.tokenize(&p.text, cfg.l_max);
                embedder.embed(&ids, cfg.l_max).unwrap().to_tensor()
            })
            .collect();
        (model, dataset, matrices)
    }

    #[test]
    fn overfits_a_handful_of_windows() {
        let (model, mut dataset, prompts) = tiny_setup(1);
        dataset.train.truncate(8);
        let cfg = TrainConfig {
            lr: 1e-2,
            steps: 200,
            batch_size: 8,
            ..Default::default()
        };
        let result = train(&model, &dataset, &prompts, &cfg).unwrap();
        assert!(
            result.final_train_loss < 1e-2,
            "train loss {} after {} steps",
            result.final_train_loss,
            result.steps_run
        );
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let run = || {
            let (model, dataset, prompts) = tiny_setup(2);
            let cfg = TrainConfig {
                steps: 30,
                batch_size: 4,
                seed: 9,
                ..Default::default()
            };
            let r = train(&model, &dataset, &prompts, &cfg).unwrap();
            (r.final_train_loss, model.named_params()[0].1.to_vec())
        };
        let (a_loss, a_w) = run();
        let (b_loss, b_w) = run();
        assert_eq!(a_loss.to_bits(), b_loss.to_bits());
        assert_eq!(a_w, b_w);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (model, dataset, prompts) = tiny_setup(3);
        let before: Vec<Vec<f64>> = model.named_params().iter().map(|(_, p)| p.to_vec()).collect();
        let cfg = TrainConfig {
            lr: 0.0,
            steps: 5,
            batch_size: 4,
            ..Default::default()
        };
        train(&model, &dataset, &prompts, &cfg).unwrap();
        let after: Vec<Vec<f64>> = model.named_params().iter().map(|(_, p)| p.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn early_stopping_restores_best_params() {
        let (model, mut dataset, prompts) = tiny_setup(4);
        // Carve a validation split out of the train windows.
        let val: Vec<_> = dataset.train.split_off(dataset.train.len() - 4);
        dataset.val = val;
        let cfg = TrainConfig {
            lr: 5e-3,
            steps: 60,
            batch_size: 4,
            patience: 3,
            val_every: 5,
            ..Default::default()
        };
        let result = train(&model, &dataset, &prompts, &cfg).unwrap();
        let best = result.best_val.unwrap();
        // Restored parameters must reproduce the best validation loss.
        let check = split_loss(&model, &dataset, Split::Val, &prompts).unwrap();
        assert_eq!(check.to_bits(), best.to_bits());
    }

    #[test]
    fn evaluation_reports_original_scale() {
        let (model, dataset, prompts) = tiny_setup(5);
        let report =
            eval_forecast_split(&model, &dataset, Split::Train, &prompts, 1).unwrap();
        assert!(report.mse.is_finite());
        assert!(report.mae <= report.mse.sqrt() + 1e-12);
        assert_eq!(report.per_horizon.len(), 2);
    }

    #[test]
    fn empty_split_is_an_error() {
        let (model, dataset, prompts) = tiny_setup(6);
        assert!(matches!(
            eval_forecast_split(&model, &dataset, Split::Test, &prompts, 1),
            Err(Error::EmptySet)
        ));
    }
}
