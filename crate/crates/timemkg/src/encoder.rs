//! Variable-axis encoders shared by both modality branches.
//!
//! Tokens are variables, not time steps: attention operates over the N
//! axis of an `N x d` input and the score matrices it returns are `N x N`.
//! Blocks are Pre-LN: normalize, attend, residual, normalize, feed
//! forward, residual. The time-series branch first maps each variable's
//! full T-step history to one token via an affine projection.

use crate::error::{Error, Result};
use crate::tensor::{linear, Tape, Tensor};
use crate::util::SplitMix64;

/// Attention score scaling: the standard per-head `1/sqrt(d/heads)`, or
/// `1/sqrt(d)` over the full model width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleConvention {
    #[default]
    PerHead,
    ModelDim,
}

impl ScaleConvention {
    fn factor(self, d: usize, n_heads: usize) -> f64 {
        match self {
            ScaleConvention::PerHead => 1.0 / ((d / n_heads) as f64).sqrt(),
            ScaleConvention::ModelDim => 1.0 / (d as f64).sqrt(),
        }
    }
}

/// Query/key/value/output projections for one attention layer.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub b_q: Option<Tensor>,
    pub b_k: Option<Tensor>,
    pub b_v: Option<Tensor>,
    pub b_o: Option<Tensor>,
    pub n_heads: usize,
}

impl AttentionParams {
    pub fn init(d: usize, n_heads: usize, bias: bool, rng: &mut SplitMix64, tape: &Tape) -> Result<Self> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} not divisible by {n_heads} heads"
            )));
        }
        let w = |rng: &mut SplitMix64| xavier(d, d, rng, tape);
        let b = |tape: &Tape| {
            bias.then(|| Tensor::param(&[d], vec![0.0; d], tape).expect("bias shape"))
        };
        Ok(Self {
            w_q: w(rng),
            w_k: w(rng),
            w_v: w(rng),
            w_o: w(rng),
            b_q: b(tape),
            b_k: b(tape),
            b_v: b(tape),
            b_o: b(tape),
            n_heads,
        })
    }

    pub fn zeros(d: usize, n_heads: usize, tape: &Tape) -> Self {
        let z = || Tensor::param(&[d, d], vec![0.0; d * d], tape).expect("zeros");
        let zb = || Some(Tensor::param(&[d], vec![0.0; d], tape).expect("zeros"));
        Self {
            w_q: z(),
            w_k: z(),
            w_v: z(),
            w_o: z(),
            b_q: zb(),
            b_k: zb(),
            b_v: zb(),
            b_o: zb(),
            n_heads,
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

pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut SplitMix64, tape: &Tape) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let vals: Vec<f64> = (0..rows * cols)
        .map(|_| (rng.next_f64() * 2.0 - 1.0) * a)
        .collect();
    Tensor::param(&[rows, cols], vals, tape).expect("xavier shape")
}

/// Multi-head self-attention over the variable axis. Returns the output
/// and the head-averaged `N x N` score matrix (detached, for inspection).
pub fn mhsa(
    x: &Tensor,
    params: &AttentionParams,
    scale: ScaleConvention,
) -> Result<(Tensor, Tensor)> {
    let s = x.shape();
    if s.len() != 2 || s[1] != params.dim() {
        return Err(Error::shape(
            "mhsa",
            format!("input {:?} vs width {}", s, params.dim()),
        ));
    }
    let (n, d) = (s[0], s[1]);
    let h = params.n_heads;
    let dh = d / h;
    let q = linear(x, &params.w_q, params.b_q.as_ref())?;
    let k = linear(x, &params.w_k, params.b_k.as_ref())?;
    let v = linear(x, &params.w_v, params.b_v.as_ref())?;
    let factor = scale.factor(d, h);
    let mut head_outs = Vec::with_capacity(h);
    let mut score_avg = vec![0.0; n * n];
    for i in 0..h {
        let qh = q.slice_cols(i * dh, dh)?;
        let kh = k.slice_cols(i * dh, dh)?;
        let vh = v.slice_cols(i * dh, dh)?;
        let scores = qh.matmul(&kh.transpose()?)?.mul_scalar(factor);
        let attn = scores.softmax_lastdim()?;
        for (acc, val) in score_avg.iter_mut().zip(attn.to_vec()) {
            *acc += val / h as f64;
        }
        head_outs.push(attn.matmul(&vh)?);
    }
    let merged = Tensor::concat_cols(&head_outs)?;
    let out = linear(&merged, &params.w_o, params.b_o.as_ref())?;
    let score_matrix = Tensor::new(&[n, n], score_avg)?;
    Ok((out, score_matrix))
}

/// Feed-forward half of a block: `w2 . act(w1 . x + b1) + b2`.
#[derive(Debug, Clone)]
pub struct FfnParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FfnParams {
    pub fn init(d: usize, d_ff: usize, rng: &mut SplitMix64, tape: &Tape) -> Self {
        Self {
            w1: xavier(d, d_ff, rng, tape),
            b1: Tensor::param(&[d_ff], vec![0.0; d_ff], tape).expect("b1"),
            w2: xavier(d_ff, d, rng, tape),
            b2: Tensor::param(&[d], vec![0.0; d], tape).expect("b2"),
        }
    }

    pub fn zeros(d: usize, d_ff: usize, tape: &Tape) -> Self {
        Self {
            w1: Tensor::param(&[d, d_ff], vec![0.0; d * d_ff], tape).expect("w1"),
            b1: Tensor::param(&[d_ff], vec![0.0; d_ff], tape).expect("b1"),
            w2: Tensor::param(&[d_ff, d], vec![0.0; d_ff * d], tape).expect("w2"),
            b2: Tensor::param(&[d], vec![0.0; d], tape).expect("b2"),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PreLnBlockParams {
    pub gamma1: Tensor,
    pub gamma2: Tensor,
    pub attn: AttentionParams,
    pub ffn: FfnParams,
}

impl PreLnBlockParams {
    pub fn init(
        d: usize,
        d_ff: usize,
        n_heads: usize,
        bias: bool,
        rng: &mut SplitMix64,
        tape: &Tape,
    ) -> Result<Self> {
        Ok(Self {
            gamma1: Tensor::param(&[d], vec![1.0; d], tape).expect("gamma1"),
            gamma2: Tensor::param(&[d], vec![1.0; d], tape).expect("gamma2"),
            attn: AttentionParams::init(d, n_heads, bias, rng, tape)?,
            ffn: FfnParams::init(d, d_ff, rng, tape),
        })
    }

    /// All weights and biases zero (norm scales included): the block
    /// becomes an exact identity map.
    pub fn zeros(d: usize, d_ff: usize, n_heads: usize, tape: &Tape) -> Self {
        Self {
            gamma1: Tensor::param(&[d], vec![0.0; d], tape).expect("gamma1"),
            gamma2: Tensor::param(&[d], vec![0.0; d], tape).expect("gamma2"),
            attn: AttentionParams::zeros(d, n_heads, tape),
            ffn: FfnParams::zeros(d, d_ff, tape),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.gamma1"), self.gamma1.clone()),
            (format!("{prefix}.gamma2"), self.gamma2.clone()),
        ];
        out.extend(self.attn.named_params(&format!("{prefix}.attn")));
        out.extend(self.ffn.named_params(&format!("{prefix}.ffn")));
        out
    }
}

/// One Pre-LN block: attend over normalized input with a residual, then
/// feed forward over the re-normalized state with a second residual.
pub fn preln_block(
    x: &Tensor,
    params: &PreLnBlockParams,
    scale: ScaleConvention,
    rms_eps: f64,
) -> Result<(Tensor, Tensor)> {
    let normed = x.rms_norm(&params.gamma1, rms_eps)?;
    let (attn_out, scores) = mhsa(&normed, &params.attn, scale)?;
    let mid = attn_out.add(x)?;
    let normed2 = mid.rms_norm(&params.gamma2, rms_eps)?;
    let hidden = linear(&normed2, &params.ffn.w1, Some(&params.ffn.b1))?.gelu();
    let out = linear(&hidden, &params.ffn.w2, Some(&params.ffn.b2))?.add(&mid)?;
    Ok((out, scores))
}

/// A stack of Pre-LN blocks applied in order. An empty stack is the
/// identity; the encoder entry points below reject it, the decoder allows
/// it.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub blocks: Vec<PreLnBlockParams>,
    pub scale: ScaleConvention,
    pub rms_eps: f64,
}

impl EncoderStack {
    pub fn init(
        depth: usize,
        d: usize,
        d_ff: usize,
        n_heads: usize,
        bias: bool,
        rng: &mut SplitMix64,
        tape: &Tape,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|_| PreLnBlockParams::init(d, d_ff, n_heads, bias, rng, tape))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            scale: ScaleConvention::default(),
            rms_eps: 1e-8,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Apply all blocks; returns the output and one score matrix per layer.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut cur = x.clone();
        let mut scores = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, s) = preln_block(&cur, block, self.scale, self.rms_eps)?;
            cur = next;
            scores.push(s);
        }
        Ok((cur, scores))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.named_params(&format!("{prefix}.block{i}")))
            .collect()
    }
}

/// Per-variable history-to-token projection: each variable's T-step
/// series becomes one d-dimensional token.
#[derive(Debug, Clone)]
pub struct InvertedEmbeddingParams {
    pub w_emb: Tensor,
    pub b_emb: Tensor,
}

impl InvertedEmbeddingParams {
    pub fn init(t: usize, d: usize, rng: &mut SplitMix64, tape: &Tape) -> Self {
        Self {
            w_emb: xavier(t, d, rng, tape),
            b_emb: Tensor::param(&[d], vec![0.0; d], tape).expect("b_emb"),
        }
    }

    pub fn history_len(&self) -> usize {
        self.w_emb.shape()[0]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w_emb"), self.w_emb.clone()),
            (format!("{prefix}.b_emb"), self.b_emb.clone()),
        ]
    }
}

/// `T x N` history to `N x d` variable tokens. Token i depends only on
/// column i of the input.
pub fn inverted_embed(x_hist: &Tensor, params: &InvertedEmbeddingParams) -> Result<Tensor> {
    let s = x_hist.shape();
    if s.len() != 2 || s[0] != params.history_len() {
        return Err(Error::shape(
            "inverted_embed",
            format!("history {:?} vs configured T={}", s, params.history_len()),
        ));
    }
    linear(&x_hist.transpose()?, &params.w_emb, Some(&params.b_emb))
}

/// Prompt branch: encode the per-variable prompt vectors. Depth must be
/// at least one.
pub fn cp_encode(prompt_vectors: &Tensor, stack: &EncoderStack) -> Result<(Tensor, Vec<Tensor>)> {
    if stack.depth() == 0 {
        return Err(Error::Config("prompt encoder needs depth >= 1".into()));
    }
    stack.encode(prompt_vectors)
}

/// Series branch: inverted embedding followed by the encoder stack.
pub fn ts_encode(
    x_hist: &Tensor,
    emb: &InvertedEmbeddingParams,
    stack: &EncoderStack,
) -> Result<(Tensor, Vec<Tensor>)> {
    if stack.depth() == 0 {
        return Err(Error::Config("series encoder needs depth >= 1".into()));
    }
    let tokens = inverted_embed(x_hist, emb)?;
    stack.encode(&tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_param, check_params, FD_STEP};

    fn rnd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64(seed);
        (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
    }

    fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
        let s = t.shape();
        let (n, d) = (s[0], s[1]);
        let src = t.to_vec();
        let mut out = vec![0.0; n * d];
        for (dst_row, &src_row) in perm.iter().enumerate() {
            out[dst_row * d..(dst_row + 1) * d].copy_from_slice(&src[src_row * d..(src_row + 1) * d]);
        }
        Tensor::new(&[n, d], out).unwrap()
    }

    #[test]
    fn mhsa_single_token_softmax_is_one() {
        let tape = Tape::new();
        let mut rng = SplitMix64(1);
        let params = AttentionParams::init(4, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[1, 4], rnd(4, 2)).unwrap();
        let (out, scores) = mhsa(&x, &params, ScaleConvention::PerHead).unwrap();
        assert_eq!(scores.to_vec(), vec![1.0]);
        // With one key the attention output is exactly w_o(v) + b_o.
        let v = linear(&x, &params.w_v, params.b_v.as_ref()).unwrap();
        let direct = linear(&v, &params.w_o, params.b_o.as_ref()).unwrap();
        for (a, b) in out.to_vec().iter().zip(direct.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mhsa_identical_rows_give_identical_outputs() {
        let tape = Tape::new();
        let mut rng = SplitMix64(3);
        let params = AttentionParams::init(6, 3, true, &mut rng, &tape).unwrap();
        let row = rnd(6, 4);
        let x = Tensor::from_rows(&[row.clone(), row]).unwrap();
        let (out, _) = mhsa(&x, &params, ScaleConvention::PerHead).unwrap();
        let v = out.to_vec();
        assert_eq!(&v[..6], &v[6..]);
    }

    #[test]
    fn mhsa_permutation_equivariance() {
        let tape = Tape::new();
        let mut rng = SplitMix64(5);
        let params = AttentionParams::init(4, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[5, 4], rnd(20, 6)).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let (out, _) = mhsa(&x, &params, ScaleConvention::PerHead).unwrap();
        let (out_p, _) = mhsa(&permute_rows(&x, &perm), &params, ScaleConvention::PerHead).unwrap();
        let expect = permute_rows(&out, &perm);
        for (a, b) in out_p.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_conventions_differ_unless_single_head() {
        let tape = Tape::new();
        let mut rng = SplitMix64(7);
        let params = AttentionParams::init(4, 2, false, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[3, 4], rnd(12, 8)).unwrap();
        let (a, _) = mhsa(&x, &params, ScaleConvention::PerHead).unwrap();
        let (b, _) = mhsa(&x, &params, ScaleConvention::ModelDim).unwrap();
        assert_ne!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn zero_weight_block_is_identity_bitwise() {
        let tape = Tape::new();
        let block = PreLnBlockParams::zeros(4, 8, 2, &tape);
        let x = Tensor::new(&[3, 4], rnd(12, 9)).unwrap();
        let (out, _) = preln_block(&x, &block, ScaleConvention::PerHead, 1e-8).unwrap();
        assert_eq!(out.to_vec(), x.to_vec());
    }

    #[test]
    fn preln_block_gradients_match_finite_differences() {
        let tape = Tape::new();
        let mut rng = SplitMix64(11);
        let block = PreLnBlockParams::init(4, 8, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::param(&[3, 4], rnd(12, 12), &tape).unwrap();
        let target = Tensor::new(&[3, 4], rnd(12, 13)).unwrap();
        let loss = preln_block(&x, &block, ScaleConvention::PerHead, 1e-8)
            .unwrap()
            .0
            .mse_loss(&target)
            .unwrap();
        tape.backward(&loss).unwrap();
        let forward = || {
            preln_block(&x, &block, ScaleConvention::PerHead, 1e-8)
                .unwrap()
                .0
                .mse_loss(&target)
                .unwrap()
                .item()
        };
        let mut params = block.named_params("block");
        params.push(("x".into(), x.clone()));
        let (name, err) = check_params(&params, forward, FD_STEP);
        assert!(err <= 1e-4, "{name}: rel err {err}");
    }

    #[test]
    fn preln_block_stays_finite_for_large_inputs() {
        let tape = Tape::new();
        let mut rng = SplitMix64(15);
        let block = PreLnBlockParams::init(4, 8, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[3, 4], rnd(12, 16).iter().map(|v| v * 1e3).collect()).unwrap();
        let (out, _) = preln_block(&x, &block, ScaleConvention::PerHead, 1e-8).unwrap();
        assert!(out.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encoder_rejects_zero_depth() {
        let stack = EncoderStack {
            blocks: vec![],
            scale: ScaleConvention::PerHead,
            rms_eps: 1e-8,
        };
        let x = Tensor::zeros(&[2, 4]);
        assert!(matches!(cp_encode(&x, &stack), Err(Error::Config(_))));
    }

    #[test]
    fn depth_one_stack_equals_single_block() {
        let tape = Tape::new();
        let mut rng = SplitMix64(17);
        let stack = EncoderStack::init(1, 4, 8, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[3, 4], rnd(12, 18)).unwrap();
        let (from_stack, _) = cp_encode(&x, &stack).unwrap();
        let (from_block, _) =
            preln_block(&x, &stack.blocks[0], stack.scale, stack.rms_eps).unwrap();
        assert_eq!(from_stack.to_vec(), from_block.to_vec());
    }

    #[test]
    fn encode_is_deterministic_across_calls() {
        let tape = Tape::new();
        let mut rng = SplitMix64(19);
        let stack = EncoderStack::init(2, 4, 8, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[3, 4], rnd(12, 20)).unwrap();
        let (a, _) = cp_encode(&x, &stack).unwrap();
        let (b, _) = cp_encode(&x, &stack).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn scores_are_row_stochastic() {
        let tape = Tape::new();
        let mut rng = SplitMix64(21);
        let stack = EncoderStack::init(2, 4, 2, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[4, 4], rnd(16, 22)).unwrap();
        let (_, scores) = cp_encode(&x, &stack).unwrap();
        assert_eq!(scores.len(), 2);
        for s in scores {
            for row in s.to_vec().chunks(4) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverted_embed_zero_series_zero_bias_is_zero() {
        let tape = Tape::new();
        let params = InvertedEmbeddingParams {
            w_emb: Tensor::param(&[2, 3], rnd(6, 23), &tape).unwrap(),
            b_emb: Tensor::param(&[3], vec![0.0; 3], &tape).unwrap(),
        };
        let x = Tensor::zeros(&[2, 4]);
        let out = inverted_embed(&x, &params).unwrap();
        assert!(out.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverted_embed_hand_case() {
        let tape = Tape::new();
        let params = InvertedEmbeddingParams {
            w_emb: Tensor::param(&[2, 1], vec![1.0, 1.0], &tape).unwrap(),
            b_emb: Tensor::param(&[1], vec![0.0], &tape).unwrap(),
        };
        // One variable with series [3, 5] over T=2.
        let x = Tensor::new(&[2, 1], vec![3.0, 5.0]).unwrap();
        let out = inverted_embed(&x, &params).unwrap();
        assert_eq!(out.to_vec(), vec![8.0]);
    }

    #[test]
    fn inverted_embed_columnwise_independence() {
        let tape = Tape::new();
        let mut rng = SplitMix64(25);
        let params = InvertedEmbeddingParams::init(3, 2, &mut rng, &tape);
        let base = rnd(6, 26); // 3 x 2: two variables
        let x = Tensor::new(&[3, 2], base.clone()).unwrap();
        let mut changed = base;
        changed[1] = 9.0; // variable 1's series
        changed[3] = -9.0;
        changed[5] = 4.5;
        let y = Tensor::new(&[3, 2], changed).unwrap();
        let a = inverted_embed(&x, &params).unwrap().to_vec();
        let b = inverted_embed(&y, &params).unwrap().to_vec();
        assert_eq!(&a[..2], &b[..2], "variable 0 token must not move");
        assert_ne!(&a[2..], &b[2..]);
    }

    #[test]
    fn inverted_embed_rejects_wrong_history_length() {
        let tape = Tape::new();
        let mut rng = SplitMix64(27);
        let params = InvertedEmbeddingParams::init(4, 2, &mut rng, &tape);
        let x = Tensor::zeros(&[3, 2]);
        assert!(inverted_embed(&x, &params).is_err());
    }

    #[test]
    fn ts_encode_permutation_equivariance_with_columns() {
        let tape = Tape::new();
        let mut rng = SplitMix64(29);
        let emb = InvertedEmbeddingParams::init(4, 4, &mut rng, &tape);
        let stack = EncoderStack::init(1, 4, 8, 2, true, &mut rng, &tape).unwrap();
        let x = Tensor::new(&[4, 3], rnd(12, 30)).unwrap(); // T=4, N=3
        let perm = [2usize, 0, 1];
        // Permute columns of the history.
        let src = x.to_vec();
        let mut permuted = vec![0.0; 12];
        for t in 0..4 {
            for (dst_col, &src_col) in perm.iter().enumerate() {
                permuted[t * 3 + dst_col] = src[t * 3 + src_col];
            }
        }
        let xp = Tensor::new(&[4, 3], permuted).unwrap();
        let (out, _) = ts_encode(&x, &emb, &stack).unwrap();
        let (out_p, _) = ts_encode(&xp, &emb, &stack).unwrap();
        let expect = permute_rows(&out, &perm);
        for (a, b) in out_p.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn full_stack_gradients_at_depth_two() {
        let tape = Tape::new();
        let mut rng = SplitMix64(31);
        let stack = EncoderStack::init(2, 8, 16, 4, true, &mut rng, &tape).unwrap();
        let x = Tensor::param(&[4, 8], rnd(32, 32), &tape).unwrap();
        let target = Tensor::new(&[4, 8], rnd(32, 33)).unwrap();
        let loss = cp_encode(&x, &stack).unwrap().0.mse_loss(&target).unwrap();
        tape.backward(&loss).unwrap();
        let forward = || {
            cp_encode(&x, &stack)
                .unwrap()
                .0
                .mse_loss(&target)
                .unwrap()
                .item()
        };
        let err = check_param(&x, forward, FD_STEP);
        assert!(err <= 1e-4, "input grad rel err {err}");
        let (name, err) = check_params(&stack.named_params("enc"), forward, FD_STEP);
        assert!(err <= 1e-4, "{name}: rel err {err}");
    }
}
