//! Implementations behind the CLI subcommands.

use std::path::Path;

use timemkg::checkpoint::Checkpoint;
use timemkg::config::RunConfig;
use timemkg::data::{load_csv, save_csv, SeriesData, Split};
use timemkg::embed::store::build_prompt_store;
use timemkg::embed::{Activation, Embedder, EmbedderSpec, Token2VectorParams};
use timemkg::error::{Error, Result};
use timemkg::kg::{load_mkg, save_mkg};
use timemkg::model::{Model, TaskKind};
use timemkg::pipeline::{
    check_manifest_compatibility, eval_split, graph_with_variables, manifest_extras,
    prompt_matrices, train_run,
};
use timemkg::synth::{gen_synthetic, load_spec};
use timemkg::tensor::{Tape, Tensor};
use timemkg::util::SplitMix64;

use crate::Command;

pub fn run(cmd: Command) -> Result<String> {
    match cmd {
        Command::BuildKg {
            triplets_in,
            graph_out,
        } => build_kg(&triplets_in, &graph_out),
        Command::Embed {
            config,
            overrides,
            out,
            checkpoint,
        } => embed(&load_config(&config, &overrides)?, &out, checkpoint.as_deref()),
        Command::Train {
            config,
            overrides,
            checkpoint_out,
            loss_curve_out,
            metrics_out,
        } => train(
            &load_config(&config, &overrides)?,
            &checkpoint_out,
            loss_curve_out.as_deref(),
            metrics_out.as_deref(),
        ),
        Command::Eval {
            config,
            overrides,
            checkpoint,
            split,
            metrics_out,
        } => eval(
            &load_config(&config, &overrides)?,
            &checkpoint,
            &split,
            metrics_out.as_deref(),
        ),
        Command::Forecast {
            config,
            overrides,
            checkpoint,
            history,
            out,
        } => forecast(&load_config(&config, &overrides)?, &checkpoint, &history, &out),
        Command::Classify {
            config,
            overrides,
            checkpoint,
            history,
        } => classify(&load_config(&config, &overrides)?, &checkpoint, &history),
        Command::ExportAttention {
            config,
            overrides,
            checkpoint,
            sample,
            split,
            out_dir,
        } => export_attention(
            &load_config(&config, &overrides)?,
            &checkpoint,
            sample,
            &split,
            &out_dir,
        ),
        Command::Synth {
            spec,
            data_out,
            triplets_out,
        } => synth(&spec, &data_out, &triplets_out),
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    for o in overrides {
        let (target, value) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not SECTION.KEY=VALUE")))?;
        let (section, key) = target
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override `{o}` is missing the section")))?;
        cfg.set(section.trim(), key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::Config(format!("unknown split `{s}`"))),
    }
}

fn build_kg(triplets_in: &Path, graph_out: &Path) -> Result<String> {
    let graph = load_mkg(triplets_in)?;
    save_mkg(&graph, graph_out)?;
    Ok(serde_json::json!({
        "command": "build-kg",
        "nodes": graph.node_count(),
        "edges": graph.edge_count(),
        "relations": graph.relation_vocab().len(),
        "out": graph_out.display().to_string(),
    })
    .to_string())
}

fn embed(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<String> {
    let data = load_csv(&cfg.data_path, cfg.label_column.as_deref())?;
    let graph = match &cfg.graph_path {
        Some(p) => load_mkg(p)?,
        None => Default::default(),
    };
    let graph = graph_with_variables(graph, &data.variables);
    let prompts =
        timemkg::model::build_prompts(&graph, &data.variables, &cfg.template, cfg.hops, cfg.variant)?;
    let embedder = Embedder::new(EmbedderSpec::DeterministicHash {
        dimension: cfg.token_dim,
        seed: cfg.embedder_seed,
    });
    let (params, activation, source) = match checkpoint {
        Some(path) => {
            let model = Model::from_checkpoint(&Checkpoint::load(path)?)?;
            if model.cfg.l_max != cfg.l_max || model.cfg.token_dim != cfg.token_dim {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "checkpoint prompt dims (l_max {}, token_dim {}) differ from config ({}, {})",
                    model.cfg.l_max, model.cfg.token_dim, cfg.l_max, cfg.token_dim
                )));
            }
            let act: Activation = model.cfg.activation.into();
            (model.t2v.clone(), act, "checkpoint")
        }
        None => {
            let tape = Tape::new();
            let mut rng = SplitMix64(cfg.seed ^ 0x7431_6d6b_67u64);
            (
                Token2VectorParams::init(cfg.l_max, cfg.token_dim, cfg.d, &mut rng, &tape),
                cfg.activation.into(),
                "seeded_init",
            )
        }
    };
    let store = build_prompt_store(&prompts, &embedder, &params, activation)?;
    store.save(out)?;
    Ok(serde_json::json!({
        "command": "embed",
        "variables": store.len(),
        "dim": store.dim,
        "params_source": source,
        "out": out.display().to_string(),
    })
    .to_string())
}

fn train(
    cfg: &RunConfig,
    checkpoint_out: &Path,
    loss_curve_out: Option<&Path>,
    metrics_out: Option<&Path>,
) -> Result<String> {
    let run = train_run(cfg)?;
    let ck = run.model.to_checkpoint(manifest_extras(&run.prepared.dataset));
    ck.save(checkpoint_out)?;

    if let Some(path) = loss_curve_out {
        let mut text = String::from("step,train_loss\n");
        for (step, loss) in &run.result.loss_curve {
            text.push_str(&format!("{step},{loss}\n"));
        }
        std::fs::write(path, text)?;
    }
    let val_json = run
        .val_metrics
        .as_ref()
        .map(|m| m.to_json())
        .unwrap_or(serde_json::Value::Null);
    if let Some(path) = metrics_out {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&serde_json::json!({
                "split": "val",
                "metrics": val_json,
            }))
            .expect("metrics serialize"),
        )?;
    }
    Ok(serde_json::json!({
        "command": "train",
        "steps_run": run.result.steps_run,
        "final_train_loss": run.result.final_train_loss,
        "best_val_loss": run.result.best_val,
        "val_metrics": val_json,
        "params": run.model.param_count(),
        "degenerate_variables": run.prepared.dataset.degenerate,
        "checkpoint": checkpoint_out.display().to_string(),
    })
    .to_string())
}

fn eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: &str,
    metrics_out: Option<&Path>,
) -> Result<String> {
    let split = parse_split(split)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let prepared = timemkg::pipeline::prepare(cfg)?;
    check_manifest_compatibility(&ck.manifest, &prepared.dataset)?;
    let report = eval_split(&model, &prepared, split, cfg)?;
    let json = report.to_json();
    if let Some(path) = metrics_out {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&serde_json::json!({
                "split": match split { Split::Train => "train", Split::Val => "val", Split::Test => "test" },
                "metrics": json,
            }))
            .expect("metrics serialize"),
        )?;
    }
    Ok(serde_json::json!({
        "command": "eval",
        "metrics": json,
    })
    .to_string())
}

/// Shared head of forecast/classify: load the checkpoint, read a history
/// window, normalize it with the training statistics.
fn load_window(
    cfg: &RunConfig,
    checkpoint: &Path,
    history: &Path,
) -> Result<(Model, SeriesData, Tensor, Vec<Tensor>, Vec<f64>, Vec<f64>)> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let window = load_csv(history, None)?;
    let vars: Vec<String> = ck.manifest["variables"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    if window.variables != vars {
        return Err(Error::IncompatibleCheckpoint(format!(
            "history columns {:?} do not match training variables {:?}",
            window.variables, vars
        )));
    }
    if window.rows != model.cfg.history_len {
        return Err(Error::shape(
            "forecast",
            format!(
                "history has {} rows, model expects {}",
                window.rows, model.cfg.history_len
            ),
        ));
    }
    let mean: Vec<f64> = ck.manifest["norm_mean"]
        .as_array()
        .map(|a| a.iter().filter_map(serde_json::Value::as_f64).collect())
        .unwrap_or_default();
    let std: Vec<f64> = ck.manifest["norm_std"]
        .as_array()
        .map(|a| a.iter().filter_map(serde_json::Value::as_f64).collect())
        .unwrap_or_default();
    if mean.len() != vars.len() || std.len() != vars.len() {
        return Err(Error::IncompatibleCheckpoint(
            "checkpoint manifest is missing normalization statistics".into(),
        ));
    }
    let n = vars.len();
    let mut values = window.values.clone();
    for (i, v) in values.iter_mut().enumerate() {
        let j = i % n;
        *v = (*v - mean[j]) / std[j];
    }
    let x = Tensor::new(&[window.rows, n], values)?;

    let graph = match &cfg.graph_path {
        Some(p) => load_mkg(p)?,
        None => Default::default(),
    };
    let graph = graph_with_variables(graph, &vars);
    let (_, matrices) = prompt_matrices(&graph, &vars, cfg)?;
    Ok((model, window, x, matrices, mean, std))
}

fn forecast(cfg: &RunConfig, checkpoint: &Path, history: &Path, out: &Path) -> Result<String> {
    let (model, window, x, matrices, mean, std) = load_window(cfg, checkpoint, history)?;
    let TaskKind::Forecast { horizon } = model.cfg.task else {
        return Err(Error::Config("checkpoint is not a forecasting model".into()));
    };
    let pred = model.forward(&x, &matrices)?.output;
    let n = window.variables.len();
    let mut values = pred.to_vec();
    for (i, v) in values.iter_mut().enumerate() {
        let j = i % n;
        *v = *v * std[j] + mean[j];
    }
    let out_data = SeriesData {
        variables: window.variables.clone(),
        values,
        rows: horizon,
        timestamps: None,
        labels: None,
    };
    save_csv(out, &out_data)?;
    Ok(serde_json::json!({
        "command": "forecast",
        "horizon": horizon,
        "variables": out_data.variables,
        "out": out.display().to_string(),
    })
    .to_string())
}

fn classify(cfg: &RunConfig, checkpoint: &Path, history: &Path) -> Result<String> {
    let (model, _, x, matrices, _, _) = load_window(cfg, checkpoint, history)?;
    let TaskKind::Classify { .. } = model.cfg.task else {
        return Err(Error::Config("checkpoint is not a classification model".into()));
    };
    let logits = model.forward(&x, &matrices)?.output.to_vec();
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(serde_json::json!({
        "command": "classify",
        "class": best,
        "logits": logits,
    })
    .to_string())
}

fn export_attention(
    cfg: &RunConfig,
    checkpoint: &Path,
    sample: usize,
    split: &str,
    out_dir: &Path,
) -> Result<String> {
    let split = parse_split(split)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let prepared = timemkg::pipeline::prepare(cfg)?;
    check_manifest_compatibility(&ck.manifest, &prepared.dataset)?;
    let windows = prepared.dataset.split(split);
    let window = windows.get(sample).ok_or_else(|| {
        Error::Config(format!(
            "sample {sample} out of range: split has {} windows",
            windows.len()
        ))
    })?;
    let x = window.history_tensor(prepared.dataset.history_len, prepared.dataset.n_vars());
    let out = model.forward(&x, &prepared.matrices)?;
    std::fs::create_dir_all(out_dir)?;
    let vars = &prepared.dataset.variables;
    let mut written = Vec::new();
    for (i, s) in out.trace.ts_scores.iter().enumerate() {
        let path = out_dir.join(format!("tse_layer{i}.csv"));
        timemkg::pipeline::write_score_csv(&path, vars, s)?;
        written.push(path.display().to_string());
    }
    for (i, s) in out.trace.cp_scores.iter().enumerate() {
        let path = out_dir.join(format!("cpe_layer{i}.csv"));
        timemkg::pipeline::write_score_csv(&path, vars, s)?;
        written.push(path.display().to_string());
    }
    if let Some(s) = &out.trace.cma_scores {
        let path = out_dir.join("cma.csv");
        timemkg::pipeline::write_score_csv(&path, vars, s)?;
        written.push(path.display().to_string());
    }
    for (i, s) in out.trace.decoder_scores.iter().enumerate() {
        let path = out_dir.join(format!("decoder_layer{i}.csv"));
        timemkg::pipeline::write_score_csv(&path, vars, s)?;
        written.push(path.display().to_string());
    }
    Ok(serde_json::json!({
        "command": "export-attention",
        "sample": sample,
        "files": written,
    })
    .to_string())
}

fn synth(spec_path: &Path, data_out: &Path, triplets_out: &Path) -> Result<String> {
    let spec = load_spec(spec_path)?;
    let out = gen_synthetic(&spec)?;
    save_csv(data_out, &out.data)?;
    save_mkg(&out.graph, triplets_out)?;
    Ok(serde_json::json!({
        "command": "synth",
        "rows": out.data.rows,
        "variables": out.data.variables,
        "edges": out.graph.edge_count(),
        "data_out": data_out.display().to_string(),
        "triplets_out": triplets_out.display().to_string(),
    })
    .to_string())
}
