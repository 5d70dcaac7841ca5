//! Run configuration: a plain key/value text format with `[section]`
//! headers, `#` comments, and one `key = value` pair per line.
//!
//! Precedence is CLI flag over file value over built-in default; the
//! flags layer lives in the command-line crate, this module owns parsing,
//! serialization, and validation. `parse(serialize(cfg))` reproduces the
//! configuration exactly.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fusion::{QkvConvention, Variant};
use crate::model::{ActivationKind, ModelConfig, ScaleKind, TaskKind};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [data]
    pub data_path: PathBuf,
    pub label_column: Option<String>,
    // [task]
    pub task: String,
    pub history: usize,
    pub horizon: usize,
    pub classes: usize,
    // [model]
    pub d: usize,
    pub depth: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub decoder_depth: usize,
    pub l_max: usize,
    pub token_dim: usize,
    pub attn_bias: bool,
    pub rms_eps: f64,
    pub qkv_convention: QkvConvention,
    pub scale_convention: ScaleKind,
    pub activation: ActivationKind,
    pub variant: Variant,
    // [retrieval]
    pub graph_path: Option<PathBuf>,
    pub template: String,
    pub hops: usize,
    pub embedder_seed: u64,
    // [train]
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub patience: usize,
    pub val_every: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub seasonal_period: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: PathBuf::new(),
            label_column: None,
            task: "forecast".into(),
            history: 96,
            horizon: 24,
            classes: 2,
            d: 64,
            depth: 2,
            heads: 4,
            d_ff: 256,
            decoder_depth: 1,
            l_max: 128,
            token_dim: 64,
            attn_bias: true,
            rms_eps: 1e-8,
            qkv_convention: QkvConvention::Equation,
            scale_convention: ScaleKind::PerHead,
            activation: ActivationKind::Gelu,
            variant: Variant::Full,
            graph_path: None,
            template: "Describe the variable {variable} and its causal relations.".into(),
            hops: 2,
            embedder_seed: 17,
            lr: 1e-2,
            steps: 200,
            batch: 16,
            patience: 0,
            val_every: 10,
            seed: 0,
            clip_norm: 5.0,
            split_train: 0.7,
            split_val: 0.1,
            split_test: 0.2,
            seasonal_period: 1,
        }
    }
}

fn qkv_to_str(q: QkvConvention) -> &'static str {
    match q {
        QkvConvention::Equation => "equation",
        QkvConvention::Prose => "prose",
    }
}

fn scale_to_str(s: ScaleKind) -> &'static str {
    match s {
        ScaleKind::PerHead => "per_head",
        ScaleKind::ModelDim => "model_dim",
    }
}

fn activation_to_str(a: ActivationKind) -> &'static str {
    match a {
        ActivationKind::Gelu => "gelu",
        ActivationKind::Identity => "identity",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section")))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(&section, key, value)
                .map_err(|e| Error::Config(format!("line {line_no}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Apply one key. Used by the parser and by CLI `--set section.key=value`
    /// overrides.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key `{section}.{key}`"));
        let bad = |what: &str| Error::Config(format!("`{value}` is not a valid {what}"));
        match (section, key) {
            ("data", "path") => self.data_path = PathBuf::from(value),
            ("data", "label_column") => {
                self.label_column = (!value.is_empty()).then(|| value.to_string())
            }
            ("task", "kind") => match value {
                "forecast" | "classify" => self.task = value.to_string(),
                _ => return Err(bad("task kind (forecast|classify)")),
            },
            ("task", "history") => self.history = value.parse().map_err(|_| bad("integer"))?,
            ("task", "horizon") => self.horizon = value.parse().map_err(|_| bad("integer"))?,
            ("task", "classes") => self.classes = value.parse().map_err(|_| bad("integer"))?,
            ("model", "d") => self.d = value.parse().map_err(|_| bad("integer"))?,
            ("model", "depth") => self.depth = value.parse().map_err(|_| bad("integer"))?,
            ("model", "heads") => self.heads = value.parse().map_err(|_| bad("integer"))?,
            ("model", "d_ff") => self.d_ff = value.parse().map_err(|_| bad("integer"))?,
            ("model", "decoder_depth") => {
                self.decoder_depth = value.parse().map_err(|_| bad("integer"))?
            }
            ("model", "l_max") => self.l_max = value.parse().map_err(|_| bad("integer"))?,
            ("model", "token_dim") => self.token_dim = value.parse().map_err(|_| bad("integer"))?,
            ("model", "attn_bias") => {
                self.attn_bias = value.parse().map_err(|_| bad("bool (true|false)"))?
            }
            ("model", "rms_eps") => self.rms_eps = value.parse().map_err(|_| bad("number"))?,
            ("model", "qkv_convention") => {
                self.qkv_convention = match value {
                    "equation" => QkvConvention::Equation,
                    "prose" => QkvConvention::Prose,
                    _ => return Err(bad("qkv convention (equation|prose)")),
                }
            }
            ("model", "scale_convention") => {
                self.scale_convention = match value {
                    "per_head" => ScaleKind::PerHead,
                    "model_dim" => ScaleKind::ModelDim,
                    _ => return Err(bad("scale convention (per_head|model_dim)")),
                }
            }
            ("model", "activation") => {
                self.activation = match value {
                    "gelu" => ActivationKind::Gelu,
                    "identity" => ActivationKind::Identity,
                    _ => return Err(bad("activation (gelu|identity)")),
                }
            }
            ("model", "variant") => self.variant = value.parse()?,
            ("retrieval", "graph") => {
                self.graph_path = (!value.is_empty()).then(|| PathBuf::from(value))
            }
            ("retrieval", "template") => self.template = value.to_string(),
            ("retrieval", "hops") => self.hops = value.parse().map_err(|_| bad("integer"))?,
            ("retrieval", "embedder_seed") => {
                self.embedder_seed = value.parse().map_err(|_| bad("integer"))?
            }
            ("train", "lr") => self.lr = value.parse().map_err(|_| bad("number"))?,
            ("train", "steps") => self.steps = value.parse().map_err(|_| bad("integer"))?,
            ("train", "batch") => self.batch = value.parse().map_err(|_| bad("integer"))?,
            ("train", "patience") => self.patience = value.parse().map_err(|_| bad("integer"))?,
            ("train", "val_every") => self.val_every = value.parse().map_err(|_| bad("integer"))?,
            ("train", "seed") => self.seed = value.parse().map_err(|_| bad("integer"))?,
            ("train", "clip_norm") => self.clip_norm = value.parse().map_err(|_| bad("number"))?,
            ("train", "split_train") => self.split_train = value.parse().map_err(|_| bad("number"))?,
            ("train", "split_val") => self.split_val = value.parse().map_err(|_| bad("number"))?,
            ("train", "split_test") => self.split_test = value.parse().map_err(|_| bad("number"))?,
            ("train", "seasonal_period") => {
                self.seasonal_period = value.parse().map_err(|_| bad("integer"))?
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("[data]\n");
        out.push_str(&format!("path = {}\n", self.data_path.display()));
        if let Some(lc) = &self.label_column {
            out.push_str(&format!("label_column = {lc}\n"));
        }
        out.push_str("\n[task]\n");
        out.push_str(&format!("kind = {}\n", self.task));
        out.push_str(&format!("history = {}\n", self.history));
        out.push_str(&format!("horizon = {}\n", self.horizon));
        out.push_str(&format!("classes = {}\n", self.classes));
        out.push_str("\n[model]\n");
        out.push_str(&format!("d = {}\n", self.d));
        out.push_str(&format!("depth = {}\n", self.depth));
        out.push_str(&format!("heads = {}\n", self.heads));
        out.push_str(&format!("d_ff = {}\n", self.d_ff));
        out.push_str(&format!("decoder_depth = {}\n", self.decoder_depth));
        out.push_str(&format!("l_max = {}\n", self.l_max));
        out.push_str(&format!("token_dim = {}\n", self.token_dim));
        out.push_str(&format!("attn_bias = {}\n", self.attn_bias));
        out.push_str(&format!("rms_eps = {}\n", self.rms_eps));
        out.push_str(&format!("qkv_convention = {}\n", qkv_to_str(self.qkv_convention)));
        out.push_str(&format!(
            "scale_convention = {}\n",
            scale_to_str(self.scale_convention)
        ));
        out.push_str(&format!("activation = {}\n", activation_to_str(self.activation)));
        out.push_str(&format!("variant = {}\n", self.variant.as_str()));
        out.push_str("\n[retrieval]\n");
        if let Some(g) = &self.graph_path {
            out.push_str(&format!("graph = {}\n", g.display()));
        }
        out.push_str(&format!("template = {}\n", self.template));
        out.push_str(&format!("hops = {}\n", self.hops));
        out.push_str(&format!("embedder_seed = {}\n", self.embedder_seed));
        out.push_str("\n[train]\n");
        out.push_str(&format!("lr = {}\n", self.lr));
        out.push_str(&format!("steps = {}\n", self.steps));
        out.push_str(&format!("batch = {}\n", self.batch));
        out.push_str(&format!("patience = {}\n", self.patience));
        out.push_str(&format!("val_every = {}\n", self.val_every));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("clip_norm = {}\n", self.clip_norm));
        out.push_str(&format!("split_train = {}\n", self.split_train));
        out.push_str(&format!("split_val = {}\n", self.split_val));
        out.push_str(&format!("split_test = {}\n", self.split_test));
        out.push_str(&format!("seasonal_period = {}\n", self.seasonal_period));
        out
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        match self.task.as_str() {
            "forecast" => Ok(TaskKind::Forecast {
                horizon: self.horizon,
            }),
            "classify" => Ok(TaskKind::Classify {
                classes: self.classes,
            }),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }

    pub fn model_config(&self, n_vars: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            n_vars,
            history_len: self.history,
            task: self.task_kind()?,
            d: self.d,
            d_ff: self.d_ff,
            depth: self.depth,
            n_heads: self.heads,
            decoder_depth: self.decoder_depth,
            l_max: self.l_max,
            token_dim: self.token_dim,
            attn_bias: self.attn_bias,
            rms_eps: self.rms_eps,
            qkv_convention: self.qkv_convention,
            scale_convention: self.scale_convention,
            activation: self.activation,
            variant: self.variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            steps: self.steps,
            batch_size: self.batch,
            patience: self.patience,
            val_every: self.val_every,
            seed: self.seed,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    pub fn splits(&self) -> (f64, f64, f64) {
        (self.split_train, self.split_val, self.split_test)
    }

    /// Check numeric ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if !self.data_path.exists() {
            return Err(Error::Config(format!(
                "data file `{}` does not exist",
                self.data_path.display()
            )));
        }
        if let Some(g) = &self.graph_path {
            if !g.exists() {
                return Err(Error::Config(format!(
                    "graph file `{}` does not exist",
                    g.display()
                )));
            }
        }
        if self.history == 0 {
            return Err(Error::Config("history must be >= 1".into()));
        }
        if self.task == "forecast" && self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.task == "classify" && self.classes < 2 {
            return Err(Error::Config("classes must be >= 2".into()));
        }
        if !self.template.contains(crate::kg::TEMPLATE_PLACEHOLDER) {
            return Err(Error::BadTemplate);
        }
        let sum = self.split_train + self.split_val + self.split_test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, need 1")));
        }
        if self.lr < 0.0 || self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("training needs lr >= 0, steps >= 1, batch >= 1".into()));
        }
        Ok(())
    }
}
