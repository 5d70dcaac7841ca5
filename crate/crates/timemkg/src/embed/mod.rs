//! Prompt embedding: tokenization, pluggable token embedders, and the
//! pooling + projection step that compresses one prompt's token matrix
//! into a single model-space vector per variable.
//!
//! The token embedder stands in for a frozen language model behind a
//! small interface; the default deterministic-hash kind keys every row on
//! the token id alone, so identical prompts embed identically across runs.

pub mod store;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{linear, Tape, Tensor};
use crate::util::SplitMix64;

/// Vocabulary learned on first pass; ids are assigned in first-seen order,
/// so a fixed prompt sequence always produces the same mapping.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer {
    vocab: BTreeMap<String, u32>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Whitespace-and-punctuation tokenization mapped through the
    /// vocabulary. Truncation keeps the prefix (the query line comes
    /// first and carries the variable identity).
    pub fn tokenize(&mut self, text: &str, l_max: usize) -> Vec<u32> {
        let mut ids = Vec::new();
        for tok in split_tokens(text) {
            if ids.len() == l_max {
                break;
            }
            let next = self.vocab.len() as u32;
            let id = *self.vocab.entry(tok.to_string()).or_insert(next);
            ids.push(id);
        }
        ids
    }
}

/// Split into maximal runs of word characters (alphanumeric or `_`) and
/// maximal runs of other non-whitespace characters.
fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    let mut word = false;
    for (i, c) in text.char_indices() {
        let is_word = c.is_alphanumeric() || c == '_';
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
        } else {
            match start {
                Some(s) if word != is_word => {
                    out.push(&text[s..i]);
                    start = Some(i);
                }
                None => start = Some(i),
                _ => {}
            }
            word = is_word;
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Which token embedder backs the prompt branch.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderSpec {
    /// Seeded pseudorandom unit-norm row per token id; reproducible
    /// across runs and platforms.
    DeterministicHash { dimension: usize, seed: u64 },
    /// Fixed table of rows indexed by token id; ids past the table map
    /// to zero rows.
    LookupTable { dimension: usize, table: Vec<f64> },
    /// Remote embedder reached over a minimal HTTP-style exchange.
    ExternalService {
        dimension: usize,
        endpoint: String,
        max_retries: usize,
    },
}

impl EmbedderSpec {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderSpec::DeterministicHash { dimension, .. }
            | EmbedderSpec::LookupTable { dimension, .. }
            | EmbedderSpec::ExternalService { dimension, .. } => *dimension,
        }
    }
}

/// Transport used by the external-service embedder; injectable for tests.
pub trait EmbedTransport {
    /// POST `body` to the endpoint and return the response body.
    fn request(&self, endpoint: &str, body: &str) -> std::result::Result<String, String>;
}

/// Blocking plain-HTTP/1.1 transport over a TCP socket. Endpoint form:
/// `host:port/path`.
pub struct HttpTransport;

impl EmbedTransport for HttpTransport {
    fn request(&self, endpoint: &str, body: &str) -> std::result::Result<String, String> {
        use std::io::{Read, Write};
        let (hostport, path) = match endpoint.find('/') {
            Some(i) => (&endpoint[..i], &endpoint[i..]),
            None => (endpoint, "/"),
        };
        let mut stream =
            std::net::TcpStream::connect(hostport).map_err(|e| e.to_string())?;
        let req = format!(
            "POST {path} HTTP/1.1\r\nHost: {hostport}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(req.as_bytes()).map_err(|e| e.to_string())?;
        let mut response = String::new();
        stream.read_to_string(&mut response).map_err(|e| e.to_string())?;
        match response.split_once("\r\n\r\n") {
            Some((_, payload)) => Ok(payload.to_string()),
            None => Err("malformed HTTP response".to_string()),
        }
    }
}

/// Token-id matrix for one prompt: `l_max x D`, zero-padded past the
/// actual token count.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbedding {
    pub tokens: Vec<u32>,
    pub l_max: usize,
    pub dim: usize,
    /// Row-major `l_max x dim`.
    pub matrix: Vec<f64>,
}

impl TokenEmbedding {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.l_max, self.dim], self.matrix.clone())
            .expect("token matrix shape is consistent by construction")
    }
}

/// Embeds token ids through a chosen backend.
pub struct Embedder {
    spec: EmbedderSpec,
    transport: Box<dyn EmbedTransport>,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec) -> Self {
        Self {
            spec,
            transport: Box::new(HttpTransport),
        }
    }

    pub fn with_transport(spec: EmbedderSpec, transport: Box<dyn EmbedTransport>) -> Self {
        Self { spec, transport }
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn embed(&self, tokens: &[u32], l_max: usize) -> Result<TokenEmbedding> {
        if tokens.len() > l_max {
            return Err(Error::shape(
                "embed_tokens",
                format!("{} tokens exceed l_max {}", tokens.len(), l_max),
            ));
        }
        let d = self.spec.dimension();
        let mut matrix = vec![0.0; l_max * d];
        match &self.spec {
            EmbedderSpec::DeterministicHash { seed, .. } => {
                for (i, &tok) in tokens.iter().enumerate() {
                    hash_row(*seed, tok, &mut matrix[i * d..(i + 1) * d]);
                }
            }
            EmbedderSpec::LookupTable { table, .. } => {
                for (i, &tok) in tokens.iter().enumerate() {
                    let start = tok as usize * d;
                    if start + d <= table.len() {
                        matrix[i * d..(i + 1) * d].copy_from_slice(&table[start..start + d]);
                    }
                }
            }
            EmbedderSpec::ExternalService {
                endpoint,
                max_retries,
                ..
            } => {
                let rows = self.request_rows(endpoint, tokens, d, *max_retries)?;
                for (i, row) in rows.iter().enumerate() {
                    matrix[i * d..(i + 1) * d].copy_from_slice(row);
                }
            }
        }
        Ok(TokenEmbedding {
            tokens: tokens.to_vec(),
            l_max,
            dim: d,
            matrix,
        })
    }

    fn request_rows(
        &self,
        endpoint: &str,
        tokens: &[u32],
        d: usize,
        max_retries: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let body = serde_json::json!({ "tokens": tokens, "dimension": d }).to_string();
        let mut last_err = String::new();
        for _ in 0..=max_retries {
            match self.transport.request(endpoint, &body) {
                Ok(resp) => {
                    let parsed: serde_json::Value = serde_json::from_str(&resp)
                        .map_err(|e| Error::Service(format!("bad response: {e}")))?;
                    let rows = parsed["rows"]
                        .as_array()
                        .ok_or_else(|| Error::Service("response missing `rows`".into()))?;
                    if rows.len() != tokens.len() {
                        return Err(Error::Service(format!(
                            "expected {} rows, got {}",
                            tokens.len(),
                            rows.len()
                        )));
                    }
                    let mut out = Vec::with_capacity(rows.len());
                    for row in rows {
                        let vals: Option<Vec<f64>> = row
                            .as_array()
                            .map(|r| r.iter().filter_map(serde_json::Value::as_f64).collect());
                        match vals {
                            Some(v) if v.len() == d => out.push(v),
                            _ => return Err(Error::Service("malformed row".into())),
                        }
                    }
                    return Ok(out);
                }
                Err(e) => last_err = e,
            }
        }
        Err(Error::Service(format!(
            "request failed after {} attempts: {last_err}",
            max_retries + 1
        )))
    }
}

/// Unit-norm pseudorandom row keyed by `(seed, token id)` only, so the
/// same token gets the same row at every position.
fn hash_row(seed: u64, token: u32, out: &mut [f64]) {
    let mut rng = SplitMix64(seed ^ ((token as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    let mut norm_sq = 0.0;
    for v in out.iter_mut() {
        *v = rng.next_gaussian();
        norm_sq += *v * *v;
    }
    if norm_sq < 1e-24 {
        out[0] = 1.0;
        return;
    }
    let inv = 1.0 / norm_sq.sqrt();
    for v in out.iter_mut() {
        *v *= inv;
    }
}

/// Activation between pooling and projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

/// Learnable pooling + projection: token matrix `l_max x D` down to a
/// single `d`-vector.
#[derive(Debug, Clone)]
pub struct Token2VectorParams {
    pub w_pool: Tensor,
    pub b_pool: Tensor,
    pub w_proj: Tensor,
    pub b_proj: Tensor,
}

impl Token2VectorParams {
    pub fn from_parts(w_pool: Tensor, b_pool: Tensor, w_proj: Tensor, b_proj: Tensor) -> Self {
        Self {
            w_pool,
            b_pool,
            w_proj,
            b_proj,
        }
    }

    /// Seeded uniform init on a tape (Xavier-style fan scaling for the
    /// projection, uniform pooling weights).
    pub fn init(
        l_max: usize,
        token_dim: usize,
        d: usize,
        rng: &mut SplitMix64,
        tape: &Tape,
    ) -> Self {
        let pool = vec![1.0 / l_max as f64; l_max];
        let a = (6.0 / (token_dim + d) as f64).sqrt();
        let proj: Vec<f64> = (0..token_dim * d)
            .map(|_| (rng.next_f64() * 2.0 - 1.0) * a)
            .collect();
        Self {
            w_pool: Tensor::param(&[l_max, 1], pool, tape).expect("pool shape"),
            b_pool: Tensor::param(&[token_dim], vec![0.0; token_dim], tape).expect("b_pool"),
            w_proj: Tensor::param(&[token_dim, d], proj, tape).expect("w_proj"),
            b_proj: Tensor::param(&[d], vec![0.0; d], tape).expect("b_proj"),
        }
    }

    pub fn l_max(&self) -> usize {
        self.w_pool.shape()[0]
    }

    pub fn token_dim(&self) -> usize {
        self.w_proj.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w_proj.shape()[1]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w_pool"), self.w_pool.clone()),
            (format!("{prefix}.b_pool"), self.b_pool.clone()),
            (format!("{prefix}.w_proj"), self.w_proj.clone()),
            (format!("{prefix}.b_proj"), self.b_proj.clone()),
        ]
    }
}

/// Pool token rows with the learned weights, apply the activation, then
/// project into model space: `w_proj^T . act(w_pool^T . M + b_pool) + b_proj`.
pub fn token2vector(
    matrix: &Tensor,
    params: &Token2VectorParams,
    activation: Activation,
) -> Result<Tensor> {
    let expect = [params.l_max(), params.token_dim()];
    if matrix.shape() != expect {
        return Err(Error::shape(
            "token2vector",
            format!("matrix {:?}, params expect {:?}", matrix.shape(), expect),
        ));
    }
    let pooled = params.w_pool.transpose()?.matmul(matrix)?; // [1, D]
    let pooled = pooled.add(&params.b_pool)?;
    let hidden = match activation {
        Activation::Gelu => pooled.gelu(),
        Activation::Identity => pooled,
    };
    let out = linear(&hidden, &params.w_proj, None)?; // [1, d]
    out.reshape(&[params.out_dim()])?.add(&params.b_proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_param, FD_STEP};

    #[test]
    fn tokenize_empty_text() {
        let mut tk = Tokenizer::new();
        assert!(tk.tokenize("", 8).is_empty());
    }

    #[test]
    fn tokenize_truncation_keeps_prefix() {
        let mut tk = Tokenizer::new();
        let full = tk.tokenize("[A] -> drives -> [B]", 64);
        let mut tk2 = Tokenizer::new();
        let cut = tk2.tokenize("[A] -> drives -> [B]", 3);
        assert_eq!(cut.len(), 3);
        assert_eq!(&full[..3], &cut[..]);
    }

    #[test]
    fn tokenize_is_deterministic() {
        let mut tk = Tokenizer::new();
        let a = tk.tokenize("load drives temperature", 16);
        let b = tk.tokenize("load drives temperature", 16);
        assert_eq!(a, b);
    }

    #[test]
    fn tokenize_splits_punctuation_runs() {
        let mut tk = Tokenizer::new();
        let ids = tk.tokenize("[HUFL] -> drives -> [OT]", 64);
        assert_eq!(ids.len(), 9); // [ HUFL ] -> drives -> [ OT ]
        assert_eq!(tk.vocab_size(), 6); // "[", "HUFL", "]", "->", "drives", "OT"
    }

    #[test]
    fn embed_empty_tokens_is_all_zero() {
        let e = Embedder::new(EmbedderSpec::DeterministicHash { dimension: 4, seed: 7 });
        let emb = e.embed(&[], 3).unwrap();
        assert!(emb.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_same_token_same_row() {
        let e = Embedder::new(EmbedderSpec::DeterministicHash { dimension: 8, seed: 7 });
        let emb = e.embed(&[5, 9, 5], 4).unwrap();
        let row0 = &emb.matrix[0..8];
        let row2 = &emb.matrix[16..24];
        assert_eq!(row0, row2);
        assert_ne!(row0, &emb.matrix[8..16]);
    }

    #[test]
    fn embed_rows_are_unit_norm() {
        let e = Embedder::new(EmbedderSpec::DeterministicHash { dimension: 16, seed: 3 });
        let emb = e.embed(&[0, 1, 2], 5).unwrap();
        for i in 0..3 {
            let norm: f64 = emb.matrix[i * 16..(i + 1) * 16].iter().map(|v| v * v).sum();
            assert!((norm.sqrt() - 1.0).abs() <= 1e-6, "row {i} norm {}", norm.sqrt());
        }
        // Padding rows stay exactly zero.
        assert!(emb.matrix[3 * 16..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lookup_table_rows_and_out_of_range() {
        let e = Embedder::new(EmbedderSpec::LookupTable {
            dimension: 2,
            table: vec![1.0, 2.0, 3.0, 4.0],
        });
        let emb = e.embed(&[1, 7], 2).unwrap();
        assert_eq!(&emb.matrix[0..2], &[3.0, 4.0]);
        assert_eq!(&emb.matrix[2..4], &[0.0, 0.0]);
    }

    struct FailingTransport;
    impl EmbedTransport for FailingTransport {
        fn request(&self, _: &str, _: &str) -> std::result::Result<String, String> {
            Err("connection refused".into())
        }
    }

    struct CannedTransport(String);
    impl EmbedTransport for CannedTransport {
        fn request(&self, _: &str, _: &str) -> std::result::Result<String, String> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn external_service_error_after_retries() {
        let e = Embedder::with_transport(
            EmbedderSpec::ExternalService {
                dimension: 2,
                endpoint: "localhost:1/embed".into(),
                max_retries: 2,
            },
            Box::new(FailingTransport),
        );
        match e.embed(&[1], 2) {
            Err(Error::Service(msg)) => assert!(msg.contains("3 attempts")),
            other => panic!("expected service error, got {other:?}"),
        }
    }

    #[test]
    fn external_service_parses_rows() {
        let e = Embedder::with_transport(
            EmbedderSpec::ExternalService {
                dimension: 2,
                endpoint: "localhost:1/embed".into(),
                max_retries: 0,
            },
            Box::new(CannedTransport(r#"{"rows":[[0.5,-0.5]]}"#.into())),
        );
        let emb = e.embed(&[42], 3).unwrap();
        assert_eq!(&emb.matrix[0..2], &[0.5, -0.5]);
    }

    fn hand_params(tape: &Tape) -> Token2VectorParams {
        Token2VectorParams::from_parts(
            Tensor::param(&[2, 1], vec![1.0, 1.0], tape).unwrap(),
            Tensor::param(&[1], vec![0.0], tape).unwrap(),
            Tensor::param(&[1, 1], vec![2.0], tape).unwrap(),
            Tensor::param(&[1], vec![0.0], tape).unwrap(),
        )
    }

    #[test]
    fn token2vector_hand_case() {
        // pool [3, 5] with weights [1, 1] -> 8; project by 2 -> 16.
        let tape = Tape::new();
        let params = hand_params(&tape);
        let m = Tensor::new(&[2, 1], vec![3.0, 5.0]).unwrap();
        let out = token2vector(&m, &params, Activation::Identity).unwrap();
        assert_eq!(out.to_vec(), vec![16.0]);
    }

    #[test]
    fn token2vector_zero_matrix_zero_bias_is_zero() {
        let tape = Tape::new();
        let params = hand_params(&tape);
        let m = Tensor::zeros(&[2, 1]);
        let out = token2vector(&m, &params, Activation::Identity).unwrap();
        assert_eq!(out.to_vec(), vec![0.0]);
    }

    #[test]
    fn token2vector_shape_mismatch() {
        let tape = Tape::new();
        let params = hand_params(&tape);
        let m = Tensor::zeros(&[3, 1]);
        assert!(token2vector(&m, &params, Activation::Identity).is_err());
    }

    #[test]
    fn token2vector_gradients_match_finite_differences() {
        let tape = Tape::new();
        let mut rng = SplitMix64(11);
        let params = Token2VectorParams::init(4, 3, 2, &mut rng, &tape);
        // Break the symmetric init so gradients are informative.
        params.b_pool.set_data(&[0.1, -0.2, 0.3]);
        params.b_proj.set_data(&[0.05, -0.07]);
        let vals: Vec<f64> = (0..12).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let m = Tensor::new(&[4, 3], vals).unwrap();
        let target = Tensor::new(&[2], vec![0.3, -0.6]).unwrap();

        let loss = token2vector(&m, &params, Activation::Gelu)
            .unwrap()
            .mse_loss(&target)
            .unwrap();
        tape.backward(&loss).unwrap();

        let forward = || {
            token2vector(&m, &params, Activation::Gelu)
                .unwrap()
                .mse_loss(&target)
                .unwrap()
                .item()
        };
        for (name, p) in params.named_params("t2v") {
            let err = check_param(&p, forward, FD_STEP);
            assert!(err <= 1e-4, "{name}: rel err {err}");
        }
    }

    #[test]
    fn token2vector_padding_invariance() {
        // Pooling weights over the zero padding rows cannot reach the
        // output: scrambling them leaves the result unchanged.
        let tape = Tape::new();
        let mut rng = SplitMix64(5);
        let e = Embedder::new(EmbedderSpec::DeterministicHash { dimension: 3, seed: 1 });
        let params = Token2VectorParams::init(6, 3, 2, &mut rng, &tape);
        let m = e.embed(&[4, 2], 6).unwrap().to_tensor();
        let before = token2vector(&m, &params, Activation::Gelu).unwrap().to_vec();
        let mut pool = params.w_pool.to_vec();
        for w in pool.iter_mut().skip(2) {
            *w = 1234.5;
        }
        params.w_pool.set_data(&pool);
        let after = token2vector(&m, &params, Activation::Gelu).unwrap().to_vec();
        assert_eq!(before, after);
    }

    #[test]
    fn token2vector_linear_in_matrix_under_identity() {
        // f(aM) = a f(M) - (a - 1) (w_proj^T b_pool + b_proj) for identity
        // activation.
        let tape = Tape::new();
        let mut rng = SplitMix64(17);
        let params = Token2VectorParams::init(3, 2, 2, &mut rng, &tape);
        params.b_pool.set_data(&[0.4, -0.3]);
        params.b_proj.set_data(&[0.2, 0.1]);
        let vals: Vec<f64> = (0..6).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let alpha = 2.75;
        let m = Tensor::new(&[3, 2], vals.clone()).unwrap();
        let ma = Tensor::new(&[3, 2], vals.iter().map(|v| v * alpha).collect()).unwrap();
        let f_m = token2vector(&m, &params, Activation::Identity).unwrap().to_vec();
        let f_ma = token2vector(&ma, &params, Activation::Identity).unwrap().to_vec();
        let bias_term = {
            let b = params
                .b_pool
                .reshape(&[1, 2])
                .unwrap()
                .matmul(&params.w_proj)
                .unwrap()
                .reshape(&[2])
                .unwrap()
                .add(&params.b_proj)
                .unwrap();
            b.to_vec()
        };
        for i in 0..2 {
            let expect = alpha * f_m[i] - (alpha - 1.0) * bias_term[i];
            assert!((f_ma[i] - expect).abs() < 1e-10);
        }
    }
}
