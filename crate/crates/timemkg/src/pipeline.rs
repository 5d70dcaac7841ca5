//! End-to-end plumbing shared by the CLI and the acceptance suite:
//! load data and graph, window, assemble prompts, embed them, build and
//! train the model, snapshot checkpoints, and evaluate splits.

use std::path::Path;

use crate::config::RunConfig;
use crate::data::{load_csv, make_windows, Split, WindowedDataset};
use crate::embed::{Embedder, EmbedderSpec, Tokenizer};
use crate::error::{Error, Result};
use crate::kg::{load_mkg, Mkg, PromptRecord, VariableNode};
use crate::metrics::MetricsReport;
use crate::model::{build_prompts, Model, TaskKind};
use crate::tensor::Tensor;
use crate::train::{eval_classification_split, eval_forecast_split, train, TrainResult};

/// Everything derived from a run configuration before a model exists.
pub struct Prepared {
    pub dataset: WindowedDataset,
    pub graph: Mkg,
    pub prompts: Vec<PromptRecord>,
    pub matrices: Vec<Tensor>,
}

/// Variables from the data that the graph does not know become isolated
/// nodes, so every variable always has a prompt.
pub fn graph_with_variables(mut graph: Mkg, variables: &[String]) -> Mkg {
    for v in variables {
        if !graph.has_node(v) {
            graph.upsert_node(VariableNode::new(v.clone()));
        }
    }
    graph
}

/// Deterministic prompt-matrix pipeline: assemble prompt text per
/// variable, fit the vocabulary over prompts in variable order, embed
/// each token matrix.
pub fn prompt_matrices(
    graph: &Mkg,
    variables: &[String],
    cfg: &RunConfig,
) -> Result<(Vec<PromptRecord>, Vec<Tensor>)> {
    let prompts = build_prompts(graph, variables, &cfg.template, cfg.hops, cfg.variant)?;
    let embedder = Embedder::new(EmbedderSpec::DeterministicHash {
        dimension: cfg.token_dim,
        seed: cfg.embedder_seed,
    });
    let mut tokenizer = Tokenizer::new();
    let mut matrices = Vec::with_capacity(prompts.len());
    for p in &prompts {
        let ids = tokenizer.tokenize(&p.text, cfg.l_max);
        matrices.push(embedder.embed(&ids, cfg.l_max)?.to_tensor());
    }
    Ok((prompts, matrices))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let data = load_csv(&cfg.data_path, cfg.label_column.as_deref())?;
    let horizon = match cfg.task_kind()? {
        TaskKind::Forecast { horizon } => horizon,
        TaskKind::Classify { .. } => 0,
    };
    let dataset = make_windows(&data, cfg.history, horizon, cfg.splits())?;
    let graph = match &cfg.graph_path {
        Some(path) => load_mkg(path)?,
        None => Mkg::new(),
    };
    let graph = graph_with_variables(graph, &dataset.variables);
    let (prompts, matrices) = prompt_matrices(&graph, &dataset.variables, cfg)?;
    Ok(Prepared {
        dataset,
        graph,
        prompts,
        matrices,
    })
}

/// Manifest extras persisted with every checkpoint: variable order and
/// the train-split normalization statistics.
pub fn manifest_extras(dataset: &WindowedDataset) -> serde_json::Value {
    serde_json::json!({
        "variables": dataset.variables,
        "norm_mean": dataset.stats.mean,
        "norm_std": dataset.stats.std,
        "norm_constant": dataset.stats.constant,
        "degenerate": dataset.degenerate,
    })
}

pub struct TrainedRun {
    pub model: Model,
    pub result: TrainResult,
    pub prepared: Prepared,
    /// Validation metrics of the final (best) parameters, when a
    /// validation split exists.
    pub val_metrics: Option<MetricsReport>,
}

/// Full training run from a configuration alone.
pub fn train_run(cfg: &RunConfig) -> Result<TrainedRun> {
    let prepared = prepare(cfg)?;
    let model = Model::init(cfg.model_config(prepared.dataset.n_vars())?, cfg.seed)?;
    let result = train(&model, &prepared.dataset, &prepared.matrices, &cfg.train_config())?;
    let val_metrics = if prepared.dataset.val.is_empty() {
        None
    } else {
        Some(eval_split(&model, &prepared, Split::Val, cfg)?)
    };
    Ok(TrainedRun {
        model,
        result,
        prepared,
        val_metrics,
    })
}

pub fn eval_split(
    model: &Model,
    prepared: &Prepared,
    split: Split,
    cfg: &RunConfig,
) -> Result<MetricsReport> {
    match model.cfg.task {
        TaskKind::Forecast { .. } => eval_forecast_split(
            model,
            &prepared.dataset,
            split,
            &prepared.matrices,
            cfg.seasonal_period,
        ),
        TaskKind::Classify { .. } => {
            eval_classification_split(model, &prepared.dataset, split, &prepared.matrices)
        }
    }
}

/// Confirm a checkpoint belongs with this data: same variables, same
/// train-split statistics.
pub fn check_manifest_compatibility(
    manifest: &serde_json::Value,
    dataset: &WindowedDataset,
) -> Result<()> {
    let vars: Vec<String> = manifest["variables"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    if vars != dataset.variables {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint variables {:?} do not match data variables {:?}",
            vars, dataset.variables
        )));
    }
    let mean: Vec<f64> = manifest["norm_mean"]
        .as_array()
        .map(|a| a.iter().filter_map(serde_json::Value::as_f64).collect())
        .unwrap_or_default();
    if mean != dataset.stats.mean {
        return Err(Error::IncompatibleCheckpoint(
            "train-split statistics differ; the data changed since training".into(),
        ));
    }
    Ok(())
}

/// Write one attention matrix as CSV: header and row labels are variable
/// names, row = query variable.
pub fn write_score_csv(path: &Path, variables: &[String], scores: &Tensor) -> Result<()> {
    let n = variables.len();
    if scores.shape() != [n, n] {
        return Err(Error::shape(
            "write_score_csv",
            format!("scores {:?} for {n} variables", scores.shape()),
        ));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["variable".to_string()];
    header.extend(variables.iter().cloned());
    w.write_record(&header)?;
    let data = scores.to_vec();
    for (i, var) in variables.iter().enumerate() {
        let mut rec = vec![var.clone()];
        for j in 0..n {
            rec.push(format!("{}", data[i * n + j]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
