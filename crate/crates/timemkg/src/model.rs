//! The assembled dual-modality model.
//!
//! Per forward pass: prompt token matrices are compressed to one vector
//! per variable and encoded by the prompt branch; the history window is
//! inverted into variable tokens and encoded by the series branch; fusion
//! injects the prompt prior into the series tokens; the decoder and a
//! task head produce the output. Structural ablations swap or bypass
//! individual stages while keeping shapes intact.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::embed::{token2vector, Activation, Token2VectorParams};
use crate::encoder::{
    cp_encode, inverted_embed, ts_encode, EncoderStack, InvertedEmbeddingParams, ScaleConvention,
};
use crate::error::{Error, Result};
use crate::fusion::{
    classify_head, cmd_decode, concat_fusion, cross_modality_attention, forecast_head,
    ClassifyHeadParams, CmaParams, ConcatFusionParams, ForecastHeadParams, QkvConvention, Variant,
};
use crate::kg::{Mkg, PromptRecord};
use crate::tensor::{Tape, Tensor};
use crate::util::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Forecast { horizon: usize },
    Classify { classes: usize },
}

/// Serializable activation choice for the prompt compression step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    #[default]
    Gelu,
    Identity,
}

impl From<ActivationKind> for Activation {
    fn from(k: ActivationKind) -> Self {
        match k {
            ActivationKind::Gelu => Activation::Gelu,
            ActivationKind::Identity => Activation::Identity,
        }
    }
}

/// Serializable attention-scale choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    #[default]
    PerHead,
    ModelDim,
}

impl From<ScaleKind> for ScaleConvention {
    fn from(k: ScaleKind) -> Self {
        match k {
            ScaleKind::PerHead => ScaleConvention::PerHead,
            ScaleKind::ModelDim => ScaleConvention::ModelDim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_vars: usize,
    pub history_len: usize,
    pub task: TaskKind,
    pub d: usize,
    pub d_ff: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub decoder_depth: usize,
    pub l_max: usize,
    pub token_dim: usize,
    pub attn_bias: bool,
    pub rms_eps: f64,
    pub qkv_convention: QkvConvention,
    pub scale_convention: ScaleKind,
    pub activation: ActivationKind,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(n_vars: usize, history_len: usize, task: TaskKind) -> Self {
        let d = 64;
        Self {
            n_vars,
            history_len,
            task,
            d,
            d_ff: 4 * d,
            depth: 2,
            n_heads: 4,
            decoder_depth: 1,
            l_max: 128,
            token_dim: 64,
            attn_bias: true,
            rms_eps: 1e-8,
            qkv_convention: QkvConvention::Equation,
            scale_convention: ScaleKind::PerHead,
            activation: ActivationKind::Gelu,
            variant: Variant::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 || self.history_len == 0 {
            return Err(Error::Config("need at least one variable and one step".into()));
        }
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model width {} must be a positive multiple of {} heads",
                self.d, self.n_heads
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("encoder depth must be >= 1".into()));
        }
        if self.l_max == 0 || self.token_dim == 0 {
            return Err(Error::Config("prompt dims must be positive".into()));
        }
        match self.task {
            TaskKind::Forecast { horizon } if horizon == 0 => {
                Err(Error::Config("forecast horizon must be >= 1".into()))
            }
            TaskKind::Classify { classes } if classes < 2 => {
                Err(Error::Config("classification needs >= 2 classes".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FusionParams {
    Cma(CmaParams),
    Concat(ConcatFusionParams),
}

#[derive(Debug, Clone)]
pub enum HeadParams {
    Forecast(ForecastHeadParams),
    Classify(ClassifyHeadParams),
}

/// Attention matrices captured during one forward pass, all detached.
pub struct AttentionTrace {
    pub ts_scores: Vec<Tensor>,
    pub cp_scores: Vec<Tensor>,
    pub cma_scores: Option<Tensor>,
    pub decoder_scores: Vec<Tensor>,
}

pub struct ModelOutput {
    /// `L x N` forecast or `[C]` logits, still in normalized space.
    pub output: Tensor,
    pub trace: AttentionTrace,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub seed: u64,
    pub tape: Tape,
    pub t2v: Token2VectorParams,
    pub inverted: InvertedEmbeddingParams,
    pub cp_stack: EncoderStack,
    pub ts_stack: EncoderStack,
    pub fusion: FusionParams,
    pub decoder: EncoderStack,
    pub head: HeadParams,
}

impl Model {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let tape = Tape::new();
        let mut rng = SplitMix64(seed ^ 0x7431_6d6b_67u64);
        let t2v = Token2VectorParams::init(cfg.l_max, cfg.token_dim, cfg.d, &mut rng, &tape);
        let inverted = InvertedEmbeddingParams::init(cfg.history_len, cfg.d, &mut rng, &tape);
        let cp_depth = if cfg.variant == Variant::WoCpe { 0 } else { cfg.depth };
        let ts_depth = if cfg.variant == Variant::WoTse { 0 } else { cfg.depth };
        let dec_depth = if cfg.variant == Variant::WoCmd {
            0
        } else {
            cfg.decoder_depth
        };
        let mut cp_stack =
            EncoderStack::init(cp_depth, cfg.d, cfg.d_ff, cfg.n_heads, cfg.attn_bias, &mut rng, &tape)?;
        let mut ts_stack =
            EncoderStack::init(ts_depth, cfg.d, cfg.d_ff, cfg.n_heads, cfg.attn_bias, &mut rng, &tape)?;
        let mut decoder =
            EncoderStack::init(dec_depth, cfg.d, cfg.d_ff, cfg.n_heads, cfg.attn_bias, &mut rng, &tape)?;
        for stack in [&mut cp_stack, &mut ts_stack, &mut decoder] {
            stack.scale = cfg.scale_convention.into();
            stack.rms_eps = cfg.rms_eps;
        }
        let fusion = if cfg.variant == Variant::WoCma {
            FusionParams::Concat(ConcatFusionParams::init(cfg.d, &mut rng, &tape))
        } else {
            FusionParams::Cma(CmaParams::init(cfg.d, cfg.attn_bias, &mut rng, &tape))
        };
        let head = match cfg.task {
            TaskKind::Forecast { horizon } => {
                HeadParams::Forecast(ForecastHeadParams::init(cfg.d, horizon, &mut rng, &tape))
            }
            TaskKind::Classify { classes } => {
                HeadParams::Classify(ClassifyHeadParams::init(cfg.d, classes, &mut rng, &tape))
            }
        };
        Ok(Self {
            cfg,
            seed,
            tape,
            t2v,
            inverted,
            cp_stack,
            ts_stack,
            fusion,
            decoder,
            head,
        })
    }

    /// Forward pass on one window. `x_hist` is `T x N` (normalized);
    /// `prompt_matrices` holds one `l_max x token_dim` matrix per
    /// variable, in variable order.
    pub fn forward(&self, x_hist: &Tensor, prompt_matrices: &[Tensor]) -> Result<ModelOutput> {
        let cfg = &self.cfg;
        if x_hist.shape() != [cfg.history_len, cfg.n_vars] {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "history {:?}, expected [{}, {}]",
                    x_hist.shape(),
                    cfg.history_len,
                    cfg.n_vars
                ),
            ));
        }
        if prompt_matrices.len() != cfg.n_vars {
            return Err(Error::shape(
                "model_forward",
                format!("{} prompt matrices for {} variables", prompt_matrices.len(), cfg.n_vars),
            ));
        }

        // Prompt branch: compress each token matrix to one vector.
        let mut rows = Vec::with_capacity(cfg.n_vars);
        for m in prompt_matrices {
            rows.push(token2vector(m, &self.t2v, cfg.activation.into())?);
        }
        let p_vectors = Tensor::concat_rows(&rows)?;
        let (p_encoded, cp_scores) = if cfg.variant == Variant::WoCpe {
            (p_vectors, Vec::new())
        } else {
            cp_encode(&p_vectors, &self.cp_stack)?
        };

        // Series branch.
        let (x_encoded, ts_scores) = if cfg.variant == Variant::WoTse {
            (inverted_embed(x_hist, &self.inverted)?, Vec::new())
        } else {
            ts_encode(x_hist, &self.inverted, &self.ts_stack)?
        };

        // Fusion.
        let (fused, cma_scores) = match &self.fusion {
            FusionParams::Cma(params) => {
                let out = cross_modality_attention(
                    &x_encoded,
                    &p_encoded,
                    params,
                    cfg.qkv_convention,
                )?;
                (out.h, Some(out.scores))
            }
            FusionParams::Concat(params) => {
                (concat_fusion(&x_encoded, &p_encoded, params)?, None)
            }
        };

        // Decode and project.
        let (decoded, decoder_scores) = cmd_decode(&fused, &self.decoder)?;
        let output = match &self.head {
            HeadParams::Forecast(params) => forecast_head(&decoded, params)?,
            HeadParams::Classify(params) => classify_head(&decoded, params)?,
        };
        Ok(ModelOutput {
            output,
            trace: AttentionTrace {
                ts_scores,
                cp_scores,
                cma_scores,
                decoder_scores,
            },
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.t2v.named_params("t2v");
        out.extend(self.inverted.named_params("inverted"));
        out.extend(self.cp_stack.named_params("cp"));
        out.extend(self.ts_stack.named_params("ts"));
        match &self.fusion {
            FusionParams::Cma(p) => out.extend(p.named_params("fusion.cma")),
            FusionParams::Concat(p) => out.extend(p.named_params("fusion.concat")),
        }
        out.extend(self.decoder.named_params("decoder"));
        match &self.head {
            HeadParams::Forecast(p) => out.extend(p.named_params("head.forecast")),
            HeadParams::Classify(p) => out.extend(p.named_params("head.classify")),
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in self.named_params() {
            t.zero_grad();
        }
    }

    /// Rebuild under a different structural variant, carrying over every
    /// weight whose name and shape still exist. Weights unique to the new
    /// structure (the concat-fusion projection, for instance) start from
    /// the seeded init.
    pub fn with_variant(&self, variant: Variant) -> Result<Model> {
        let mut cfg = self.cfg.clone();
        cfg.variant = variant;
        let new = Model::init(cfg, self.seed)?;
        let source: std::collections::BTreeMap<String, Tensor> =
            self.named_params().into_iter().collect();
        for (name, t) in new.named_params() {
            if let Some(src) = source.get(&name) {
                if src.shape() == t.shape() {
                    t.set_data(&src.to_vec());
                }
            }
        }
        Ok(new)
    }

    /// Snapshot parameters plus manifest. `extra` fields (normalization
    /// stats, variable names, metrics) are merged into the manifest
    /// object alongside the model config and seed.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut manifest = serde_json::json!({
            "config": self.cfg,
            "seed": self.seed,
        });
        if let (Some(obj), Some(extra)) = (manifest.as_object_mut(), extra.as_object()) {
            for (k, v) in extra {
                obj.insert(k.clone(), v.clone());
            }
        }
        let tensors = self
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        Checkpoint { manifest, tensors }
    }

    /// Rebuild a model from a checkpoint. Every parameter named in the
    /// rebuilt structure must be present with a matching shape.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        let cfg: ModelConfig = serde_json::from_value(ck.manifest["config"].clone())
            .map_err(|e| Error::IncompatibleCheckpoint(format!("bad config in manifest: {e}")))?;
        let seed = ck.manifest["seed"].as_u64().unwrap_or(0);
        let model = Model::init(cfg, seed)?;
        for (name, t) in model.named_params() {
            let stored = ck.tensor(&name).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("missing tensor `{name}`"))
            })?;
            if stored.shape != t.shape() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    stored.shape,
                    t.shape()
                )));
            }
            t.set_data(&stored.data);
        }
        Ok(model)
    }
}

/// Assemble per-variable prompts for the model's variable order. The
/// no-graph ablation keeps only the query line.
pub fn build_prompts(
    graph: &Mkg,
    variables: &[String],
    template: &str,
    hops: usize,
    variant: Variant,
) -> Result<Vec<PromptRecord>> {
    let mut prompts = Vec::with_capacity(variables.len());
    for v in variables {
        if variant == Variant::WoMkg {
            if !template.contains(crate::kg::TEMPLATE_PLACEHOLDER) {
                return Err(Error::BadTemplate);
            }
            let text = template.replace(crate::kg::TEMPLATE_PLACEHOLDER, v);
            prompts.push(PromptRecord::new(v.clone(), text));
        } else {
            prompts.push(graph.assemble_prompt(v, template, hops)?);
        }
    }
    Ok(prompts)
}
