//! Cross-modality fusion, the post-fusion decoder, and task heads.
//!
//! Fusion attends across the variable axis between the prompt-branch and
//! series-branch tokens and keeps a residual path to the series tokens.
//! Two querying conventions exist because the source formula and its
//! accompanying prose disagree about which branch supplies the query;
//! both are implemented and the formula reading is the default. The value
//! path always comes from the prompt branch.

use serde::{Deserialize, Serialize};

use crate::encoder::{xavier, EncoderStack};
use crate::error::{Error, Result};
use crate::tensor::{linear, Tape, Tensor};
use crate::util::SplitMix64;

/// Which branch supplies attention queries in fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QkvConvention {
    /// Query from the prompt branch, key from the series branch.
    #[default]
    Equation,
    /// Query from the series branch, key from the prompt branch.
    Prose,
}

/// Single-head fusion projections, all `d x d`.
#[derive(Debug, Clone)]
pub struct CmaParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub b_q: Option<Tensor>,
    pub b_k: Option<Tensor>,
    pub b_v: Option<Tensor>,
    pub b_o: Option<Tensor>,
}

impl CmaParams {
    pub fn init(d: usize, bias: bool, rng: &mut SplitMix64, tape: &Tape) -> Self {
        let b = || bias.then(|| Tensor::param(&[d], vec![0.0; d], tape).expect("bias"));
        Self {
            w_q: xavier(d, d, rng, tape),
            w_k: xavier(d, d, rng, tape),
            w_v: xavier(d, d, rng, tape),
            w_o: xavier(d, d, rng, tape),
            b_q: b(),
            b_k: b(),
            b_v: b(),
            b_o: b(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.w_q"), self.w_q.clone()),
            (format!("{prefix}.w_k"), self.w_k.clone()),
            (format!("{prefix}.w_v"), self.w_v.clone()),
            (format!("{prefix}.w_o"), self.w_o.clone()),
        ];
        for (name, b) in [
            ("b_q", &self.b_q),
            ("b_k", &self.b_k),
            ("b_v", &self.b_v),
            ("b_o", &self.b_o),
        ] {
            if let Some(b) = b {
                out.push((format!("{prefix}.{name}"), b.clone()));
            }
        }
        out
    }
}

/// Fused variable tokens plus the cross-modality score matrix.
pub struct FusedRepresentation {
    /// `N x d` enhanced series representation.
    pub h: Tensor,
    /// `N x N` row-stochastic scores (detached, for inspection).
    pub scores: Tensor,
}

/// Fuse the two branches: scores from query/key per the chosen
/// convention scaled by `1/sqrt(d)`, values from the prompt branch,
/// output projected and added to the series tokens.
pub fn cross_modality_attention(
    x_num: &Tensor,
    p_text: &Tensor,
    params: &CmaParams,
    convention: QkvConvention,
) -> Result<FusedRepresentation> {
    let d = params.dim();
    if x_num.shape() != [x_num.shape()[0], d] || x_num.shape() != p_text.shape() {
        return Err(Error::shape(
            "cross_modality_attention",
            format!("x {:?}, p {:?}, width {}", x_num.shape(), p_text.shape(), d),
        ));
    }
    let (q_src, k_src) = match convention {
        QkvConvention::Equation => (p_text, x_num),
        QkvConvention::Prose => (x_num, p_text),
    };
    let q = linear(q_src, &params.w_q, params.b_q.as_ref())?;
    let k = linear(k_src, &params.w_k, params.b_k.as_ref())?;
    let v = linear(p_text, &params.w_v, params.b_v.as_ref())?;
    let scores = q
        .matmul(&k.transpose()?)?
        .mul_scalar(1.0 / (d as f64).sqrt())
        .softmax_lastdim()?;
    let ctx = scores.matmul(&v)?;
    let h = linear(&ctx, &params.w_o, params.b_o.as_ref())?.add(x_num)?;
    Ok(FusedRepresentation {
        h,
        scores: scores.detach(),
    })
}

/// Fallback fusion for the no-attention ablation: concatenate both
/// branches and project back to width d.
#[derive(Debug, Clone)]
pub struct ConcatFusionParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConcatFusionParams {
    pub fn init(d: usize, rng: &mut SplitMix64, tape: &Tape) -> Self {
        Self {
            w: xavier(2 * d, d, rng, tape),
            b: Tensor::param(&[d], vec![0.0; d], tape).expect("bias"),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w"), self.w.clone()),
            (format!("{prefix}.b"), self.b.clone()),
        ]
    }
}

pub fn concat_fusion(
    x_num: &Tensor,
    p_text: &Tensor,
    params: &ConcatFusionParams,
) -> Result<Tensor> {
    let joined = Tensor::concat_cols(&[x_num.clone(), p_text.clone()])?;
    linear(&joined, &params.w, Some(&params.b))
}

/// Post-fusion decoder: a Pre-LN stack over variable tokens. Depth 0 is
/// the identity by contract.
pub fn cmd_decode(h: &Tensor, stack: &EncoderStack) -> Result<(Tensor, Vec<Tensor>)> {
    stack.encode(h)
}

/// Per-variable forecast projection `d -> L`, weights shared across
/// variables; output transposed to `L x N`.
#[derive(Debug, Clone)]
pub struct ForecastHeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl ForecastHeadParams {
    pub fn init(d: usize, horizon: usize, rng: &mut SplitMix64, tape: &Tape) -> Self {
        Self {
            w: xavier(d, horizon, rng, tape),
            b: Tensor::param(&[horizon], vec![0.0; horizon], tape).expect("bias"),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w"), self.w.clone()),
            (format!("{prefix}.b"), self.b.clone()),
        ]
    }
}

pub fn forecast_head(h: &Tensor, params: &ForecastHeadParams) -> Result<Tensor> {
    linear(h, &params.w, Some(&params.b))?.transpose()
}

/// Mean-pool variable tokens, then project `d -> C`.
#[derive(Debug, Clone)]
pub struct ClassifyHeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl ClassifyHeadParams {
    pub fn init(d: usize, classes: usize, rng: &mut SplitMix64, tape: &Tape) -> Self {
        Self {
            w: xavier(d, classes, rng, tape),
            b: Tensor::param(&[classes], vec![0.0; classes], tape).expect("bias"),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w"), self.w.clone()),
            (format!("{prefix}.b"), self.b.clone()),
        ]
    }
}

pub fn classify_head(h: &Tensor, params: &ClassifyHeadParams) -> Result<Tensor> {
    let classes = params.w.shape()[1];
    let pooled = h.mean_rows()?.reshape(&[1, h.shape()[1]])?;
    linear(&pooled, &params.w, Some(&params.b))?.reshape(&[classes])
}

/// Structural ablations mirroring the model's component study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Prompts reduce to the bare query line: no retrieved triplets.
    WoMkg,
    /// Prompt vectors skip the prompt encoder stack.
    WoCpe,
    /// Series tokens skip the series encoder stack.
    WoTse,
    /// Fusion replaced by concatenation plus projection.
    WoCma,
    /// Decoder removed (depth 0).
    WoCmd,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WoMkg,
        Variant::WoCpe,
        Variant::WoTse,
        Variant::WoCma,
        Variant::WoCmd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoMkg => "wo_mkg",
            Variant::WoCpe => "wo_cpe",
            Variant::WoTse => "wo_tse",
            Variant::WoCma => "wo_cma",
            Variant::WoCmd => "wo_cmd",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_params, FD_STEP};

    fn rnd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64(seed);
        (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
    }

    fn zero_bias_params(d: usize, tape: &Tape) -> CmaParams {
        let mut rng = SplitMix64(41);
        let mut p = CmaParams::init(d, true, &mut rng, tape);
        p.b_q = None;
        p.b_k = None;
        p.b_v = None;
        p.b_o = None;
        p
    }

    #[test]
    fn zero_prompt_branch_leaves_series_untouched() {
        let tape = Tape::new();
        let params = zero_bias_params(4, &tape);
        let x = Tensor::new(&[3, 4], rnd(12, 1)).unwrap();
        let p = Tensor::zeros(&[3, 4]);
        for conv in [QkvConvention::Equation, QkvConvention::Prose] {
            let fused = cross_modality_attention(&x, &p, &params, conv).unwrap();
            assert_eq!(fused.h.to_vec(), x.to_vec());
        }
    }

    #[test]
    fn single_variable_attends_to_itself() {
        let tape = Tape::new();
        let params = zero_bias_params(3, &tape);
        let x = Tensor::new(&[1, 3], rnd(3, 2)).unwrap();
        let p = Tensor::new(&[1, 3], rnd(3, 3)).unwrap();
        let fused =
            cross_modality_attention(&x, &p, &params, QkvConvention::Equation).unwrap();
        assert_eq!(fused.scores.to_vec(), vec![1.0]);
        let direct = linear(
            &linear(&p, &params.w_v, None).unwrap(),
            &params.w_o,
            None,
        )
        .unwrap()
        .add(&x)
        .unwrap();
        for (a, b) in fused.h.to_vec().iter().zip(direct.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_match_manual_computation_and_shift_invariance() {
        let tape = Tape::new();
        let params = zero_bias_params(2, &tape);
        let x = Tensor::new(&[3, 2], rnd(6, 5)).unwrap();
        let p = Tensor::new(&[3, 2], rnd(6, 6)).unwrap();
        let fused =
            cross_modality_attention(&x, &p, &params, QkvConvention::Equation).unwrap();

        // Independent scalar-loop re-computation of the score path, with
        // an arbitrary constant added pre-softmax.
        let (wq, wk) = (params.w_q.to_vec(), params.w_k.to_vec());
        let (xv, pv) = (x.to_vec(), p.to_vec());
        let d = 2;
        let matvec = |w: &[f64], row: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|j| (0..d).map(|i| row[i] * w[i * d + j]).sum())
                .collect()
        };
        let shift = 3.7;
        let mut manual = vec![0.0; 9];
        for i in 0..3 {
            let q = matvec(&wq, &pv[i * d..(i + 1) * d]);
            let mut row = vec![0.0; 3];
            for j in 0..3 {
                let k = matvec(&wk, &xv[j * d..(j + 1) * d]);
                let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
                row[j] = dot / (d as f64).sqrt() + shift;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..3 {
                manual[i * 3 + j] = exps[j] / sum;
            }
        }
        for (a, b) in fused.scores.to_vec().iter().zip(&manual) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn scores_are_row_stochastic() {
        let tape = Tape::new();
        let mut rng = SplitMix64(7);
        let params = CmaParams::init(4, true, &mut rng, &tape);
        let x = Tensor::new(&[5, 4], rnd(20, 8)).unwrap();
        let p = Tensor::new(&[5, 4], rnd(20, 9)).unwrap();
        let fused =
            cross_modality_attention(&x, &p, &params, QkvConvention::Equation).unwrap();
        for row in fused.scores.to_vec().chunks(5) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conventions_swap_query_and_key_roles() {
        let tape = Tape::new();
        let mut rng = SplitMix64(10);
        let params = CmaParams::init(4, false, &mut rng, &tape);
        let x = Tensor::new(&[3, 4], rnd(12, 11)).unwrap();
        let p = Tensor::new(&[3, 4], rnd(12, 12)).unwrap();
        let eq = cross_modality_attention(&x, &p, &params, QkvConvention::Equation).unwrap();
        let pr = cross_modality_attention(&x, &p, &params, QkvConvention::Prose).unwrap();
        assert_ne!(eq.scores.to_vec(), pr.scores.to_vec());
    }

    #[test]
    fn cma_gradients_match_finite_differences() {
        let tape = Tape::new();
        let mut rng = SplitMix64(13);
        let params = CmaParams::init(4, true, &mut rng, &tape);
        let x = Tensor::param(&[3, 4], rnd(12, 14), &tape).unwrap();
        let p = Tensor::param(&[3, 4], rnd(12, 15), &tape).unwrap();
        let target = Tensor::new(&[3, 4], rnd(12, 16)).unwrap();
        for conv in [QkvConvention::Equation, QkvConvention::Prose] {
            tape.reset();
            let mut all = params.named_params("cma");
            all.push(("x".into(), x.clone()));
            all.push(("p".into(), p.clone()));
            for (_, t) in &all {
                t.zero_grad();
            }
            let loss = cross_modality_attention(&x, &p, &params, conv)
                .unwrap()
                .h
                .mse_loss(&target)
                .unwrap();
            tape.backward(&loss).unwrap();
            let forward = || {
                cross_modality_attention(&x, &p, &params, conv)
                    .unwrap()
                    .h
                    .mse_loss(&target)
                    .unwrap()
                    .item()
            };
            let (name, err) = check_params(&all, forward, FD_STEP);
            assert!(err <= 1e-4, "{conv:?} {name}: rel err {err}");
        }
    }

    #[test]
    fn concat_fusion_keeps_shape() {
        let tape = Tape::new();
        let mut rng = SplitMix64(17);
        let params = ConcatFusionParams::init(4, &mut rng, &tape);
        let x = Tensor::new(&[3, 4], rnd(12, 18)).unwrap();
        let p = Tensor::new(&[3, 4], rnd(12, 19)).unwrap();
        let h = concat_fusion(&x, &p, &params).unwrap();
        assert_eq!(h.shape(), &[3, 4]);
    }

    #[test]
    fn decoder_zero_weights_and_depth_zero_are_identity() {
        let tape = Tape::new();
        let x = Tensor::new(&[3, 4], rnd(12, 20)).unwrap();
        let empty = EncoderStack {
            blocks: vec![],
            scale: Default::default(),
            rms_eps: 1e-8,
        };
        let (out, scores) = cmd_decode(&x, &empty).unwrap();
        assert_eq!(out.to_vec(), x.to_vec());
        assert!(scores.is_empty());

        let zeroed = EncoderStack {
            blocks: vec![crate::encoder::PreLnBlockParams::zeros(4, 8, 2, &tape)],
            scale: Default::default(),
            rms_eps: 1e-8,
        };
        let (out, _) = cmd_decode(&x, &zeroed).unwrap();
        assert_eq!(out.to_vec(), x.to_vec());
    }

    #[test]
    fn decoder_gradients_at_depth_one() {
        let tape = Tape::new();
        let mut rng = SplitMix64(21);
        let stack = EncoderStack::init(1, 4, 8, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::param(&[3, 4], rnd(12, 22), &tape).unwrap();
        let target = Tensor::new(&[3, 4], rnd(12, 23)).unwrap();
        let loss = cmd_decode(&x, &stack).unwrap().0.mse_loss(&target).unwrap();
        tape.backward(&loss).unwrap();
        let forward = || {
            cmd_decode(&x, &stack)
                .unwrap()
                .0
                .mse_loss(&target)
                .unwrap()
                .item()
        };
        let mut all = stack.named_params("dec");
        all.push(("x".into(), x.clone()));
        let (name, err) = check_params(&all, forward, FD_STEP);
        assert!(err <= 1e-4, "{name}: rel err {err}");
    }

    #[test]
    fn forecast_head_zero_input_zero_bias_is_zero() {
        let tape = Tape::new();
        let mut rng = SplitMix64(24);
        let params = ForecastHeadParams::init(4, 3, &mut rng, &tape);
        let h = Tensor::zeros(&[2, 4]);
        let y = forecast_head(&h, &params).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forecast_head_hand_case() {
        let tape = Tape::new();
        let params = ForecastHeadParams {
            w: Tensor::param(&[1, 2], vec![1.0, 2.0], &tape).unwrap(),
            b: Tensor::param(&[2], vec![0.0; 2], &tape).unwrap(),
        };
        let h = Tensor::new(&[1, 1], vec![3.0]).unwrap();
        let y = forecast_head(&h, &params).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.to_vec(), vec![3.0, 6.0]);
    }

    #[test]
    fn classify_head_pools_identical_tokens_to_token_value() {
        let tape = Tape::new();
        let row = rnd(4, 25);
        let h = Tensor::from_rows(&[row.clone(), row.clone(), row.clone()]).unwrap();
        // Identity-ish projection to read the pooled vector back out.
        let mut w = vec![0.0; 16];
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let params = ClassifyHeadParams {
            w: Tensor::param(&[4, 4], w, &tape).unwrap(),
            b: Tensor::param(&[4], vec![0.0; 4], &tape).unwrap(),
        };
        let logits = classify_head(&h, &params).unwrap();
        for (a, b) in logits.to_vec().iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_head_zero_input_returns_bias() {
        let tape = Tape::new();
        let params = ClassifyHeadParams {
            w: Tensor::param(&[4, 3], vec![0.5; 12], &tape).unwrap(),
            b: Tensor::param(&[3], vec![0.1, -0.2, 0.3], &tape).unwrap(),
        };
        let h = Tensor::zeros(&[2, 4]);
        let logits = classify_head(&h, &params).unwrap();
        assert_eq!(logits.to_vec(), vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn classify_head_gradients_match_finite_differences() {
        let tape = Tape::new();
        let mut rng = SplitMix64(26);
        let params = ClassifyHeadParams::init(4, 3, &mut rng, &tape);
        let h = Tensor::param(&[3, 4], rnd(12, 27), &tape).unwrap();
        let loss = classify_head(&h, &params).unwrap().cross_entropy(1).unwrap();
        tape.backward(&loss).unwrap();
        let forward = || {
            classify_head(&h, &params)
                .unwrap()
                .cross_entropy(1)
                .unwrap()
                .item()
        };
        let mut all = params.named_params("cls");
        all.push(("h".into(), h.clone()));
        let (name, err) = check_params(&all, forward, FD_STEP);
        assert!(err <= 1e-4, "{name}: rel err {err}");
    }

    #[test]
    fn variant_parsing_round_trips_and_rejects_unknown() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!(
            "wo_everything".parse::<Variant>(),
            Err(Error::UnknownVariant(_))
        ));
    }
}
