//! Conditional autoregressive decoder.
//!
//! A single-layer gated recurrent cell whose initial hidden state is a
//! projection of the context vector. The distribution over the next token is
//! computed from the current hidden state by one of two heads:
//!
//! * untied: `logits = W_p h + b_p`
//! * tied:   `logits = W_e^T tanh(W_p h + b_p)`, reusing the input embedding
//!   table so words with fixed embeddings can be produced without having been
//!   seen as training targets.

mod checkpoint;
mod grad;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{parse_embedding_table, CHECKPOINT_FORMAT_VERSION};
pub use grad::{gradient_check, Example, Gradients};

use crate::decode::Scorer;
use crate::error::{Error, Result};
use crate::lexicon::TokenId;

/// Range of the uniform initializer.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_dim: usize,
    /// Output vocabulary size, end-of-sequence included.
    pub vocab_size: usize,
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("context_dim", self.context_dim),
            ("vocab_size", self.vocab_size),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::InvalidDimensions(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.0[..])
    }
}

impl From<Vec<f64>> for ContextVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Parameter tensors. Also used as the container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// `M x V`, one column per token.
    pub embed: Array2<f64>,
    pub ctx_w: Array2<f64>,
    pub ctx_b: Array1<f64>,
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_n: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_n: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_n: Array1<f64>,
    /// `V x N` untied, `M x N` tied.
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

pub(crate) const TENSOR_NAMES: [&str; 14] = [
    "embed", "ctx_w", "ctx_b", "w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n", "out_w", "out_b",
];

impl Tensors {
    pub fn zeros(config: &ModelConfig, tied: bool) -> Self {
        let ModelConfig {
            embed_dim: m,
            hidden_dim: n,
            context_dim: d,
            vocab_size: v,
        } = *config;
        let out = if tied { m } else { v };
        Self {
            embed: Array2::zeros((m, v)),
            ctx_w: Array2::zeros((n, d)),
            ctx_b: Array1::zeros(n),
            w_z: Array2::zeros((n, m)),
            w_r: Array2::zeros((n, m)),
            w_n: Array2::zeros((n, m)),
            u_z: Array2::zeros((n, n)),
            u_r: Array2::zeros((n, n)),
            u_n: Array2::zeros((n, n)),
            b_z: Array1::zeros(n),
            b_r: Array1::zeros(n),
            b_n: Array1::zeros(n),
            out_w: Array2::zeros((out, n)),
            out_b: Array1::zeros(out),
        }
    }

    /// Flat views in [`TENSOR_NAMES`] order.
    pub fn slices(&self) -> [&[f64]; 14] {
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s2(&self.embed),
            s2(&self.ctx_w),
            s1(&self.ctx_b),
            s2(&self.w_z),
            s2(&self.w_r),
            s2(&self.w_n),
            s2(&self.u_z),
            s2(&self.u_r),
            s2(&self.u_n),
            s1(&self.b_z),
            s1(&self.b_r),
            s1(&self.b_n),
            s2(&self.out_w),
            s1(&self.out_b),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 14] {
        let Tensors {
            embed,
            ctx_w,
            ctx_b,
            w_z,
            w_r,
            w_n,
            u_z,
            u_r,
            u_n,
            b_z,
            b_r,
            b_n,
            out_w,
            out_b,
        } = self;
        [
            embed.as_slice_mut().expect("standard layout"),
            ctx_w.as_slice_mut().expect("standard layout"),
            ctx_b.as_slice_mut().expect("standard layout"),
            w_z.as_slice_mut().expect("standard layout"),
            w_r.as_slice_mut().expect("standard layout"),
            w_n.as_slice_mut().expect("standard layout"),
            u_z.as_slice_mut().expect("standard layout"),
            u_r.as_slice_mut().expect("standard layout"),
            u_n.as_slice_mut().expect("standard layout"),
            b_z.as_slice_mut().expect("standard layout"),
            b_r.as_slice_mut().expect("standard layout"),
            b_n.as_slice_mut().expect("standard layout"),
            out_w.as_slice_mut().expect("standard layout"),
            out_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn shapes(&self) -> [Vec<usize>; 14] {
        let s2 = |a: &Array2<f64>| a.shape().to_vec();
        let s1 = |a: &Array1<f64>| a.shape().to_vec();
        [
            s2(&self.embed),
            s2(&self.ctx_w),
            s1(&self.ctx_b),
            s2(&self.w_z),
            s2(&self.w_r),
            s2(&self.w_n),
            s2(&self.u_z),
            s2(&self.u_r),
            s2(&self.u_n),
            s1(&self.b_z),
            s1(&self.b_r),
            s1(&self.b_n),
            s2(&self.out_w),
            s1(&self.out_b),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensors) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for dst in self.slices_mut() {
            dst.iter_mut().for_each(|d| *d *= factor);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tied_output: bool,
    pub freeze_embeddings: bool,
    /// Multiplier applied to the learning rate of the embedding table when
    /// it is not frozen.
    pub embed_lr_scale: f64,
    pub seed: u64,
    pub tensors: Tensors,
}

impl ModelParams {
    /// Uniform initialization in `[-0.1, 0.1]`, reproducible from `seed`.
    pub fn init(config: ModelConfig, tied_output: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut tensors = Tensors::zeros(&config, tied_output);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slice in tensors.slices_mut() {
            for x in slice.iter_mut() {
                *x = rng.gen_range(-INIT_SCALE..=INIT_SCALE);
            }
        }
        Ok(Self {
            config,
            tied_output,
            freeze_embeddings: false,
            embed_lr_scale: 1.0,
            seed,
            tensors,
        })
    }

    /// All parameters zero: every conditional distribution is uniform.
    pub fn zeros(config: ModelConfig, tied_output: bool) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tied_output,
            freeze_embeddings: false,
            embed_lr_scale: 1.0,
            seed: 0,
            tensors: Tensors::zeros(&config, tied_output),
        })
    }

    pub fn eos_id(&self) -> TokenId {
        self.config.vocab_size - 1
    }

    /// Replaces the embedding table (`M x V`). With the tied head the same
    /// table also scores outputs.
    pub fn load_fixed_embeddings(&mut self, table: Array2<f64>, freeze: bool) -> Result<()> {
        let expected = (self.config.embed_dim, self.config.vocab_size);
        if table.dim() != expected {
            return Err(Error::InvalidDimensions(format!(
                "embedding table is {:?}, expected {:?}",
                table.dim(),
                expected
            )));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDimensions(
                "embedding table has non-finite entries".into(),
            ));
        }
        self.tensors.embed = table.as_standard_layout().into_owned();
        self.freeze_embeddings = freeze;
        Ok(())
    }

    fn check_context(&self, ctx: &ContextVector) -> Result<()> {
        if ctx.dim() != self.config.context_dim {
            return Err(Error::ContextDimension {
                expected: self.config.context_dim,
                got: ctx.dim(),
            });
        }
        Ok(())
    }

    fn check_token(&self, tok: TokenId) -> Result<()> {
        if tok >= self.config.vocab_size {
            return Err(Error::InvalidToken(tok));
        }
        Ok(())
    }

    pub(crate) fn initial_hidden(&self, ctx: &ContextVector) -> Array1<f64> {
        let t = &self.tensors;
        (t.ctx_w.dot(&ctx.view()) + &t.ctx_b).mapv(f64::tanh)
    }

    pub(crate) fn logits(&self, h: &Array1<f64>) -> Array1<f64> {
        let t = &self.tensors;
        let pre = t.out_w.dot(h) + &t.out_b;
        if self.tied_output {
            t.embed.t().dot(&pre.mapv(f64::tanh))
        } else {
            pre
        }
    }

    pub(crate) fn gru_gates(&self, h: &Array1<f64>, tok: TokenId) -> GruGates {
        let t = &self.tensors;
        let x = t.embed.column(tok);
        let z = (t.w_z.dot(&x) + t.u_z.dot(h) + &t.b_z).mapv(sigmoid);
        let r = (t.w_r.dot(&x) + t.u_r.dot(h) + &t.b_r).mapv(sigmoid);
        let rh = &r * h;
        let n = (t.w_n.dot(&x) + t.u_n.dot(&rh) + &t.b_n).mapv(f64::tanh);
        let mut h_next = Array1::zeros(h.len());
        Zip::from(&mut h_next)
            .and(&z)
            .and(&n)
            .and(h)
            .for_each(|o, &z, &n, &h| *o = (1.0 - z) * n + z * h);
        GruGates { z, r, n, rh, h_next }
    }

    pub(crate) fn advance_hidden(&self, h: &Array1<f64>, tok: TokenId) -> Array1<f64> {
        self.gru_gates(h, tok).h_next
    }

    /// Log-probabilities of the next token given the context and a prefix.
    pub fn next_token_logprobs(&self, ctx: &ContextVector, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        let mut h = self.initial_hidden(ctx);
        for &tok in prefix {
            self.check_token(tok)?;
            if tok == self.eos_id() {
                return Err(Error::UnexpectedEos);
            }
            h = self.advance_hidden(&h, tok);
        }
        Ok(log_softmax(&self.logits(&h)).to_vec())
    }

    /// `log p(seq | ctx)` as the sum of per-step conditionals; `seq` must end
    /// with eos and contain it nowhere else.
    pub fn sequence_logprob(&self, ctx: &ContextVector, seq: &[TokenId]) -> Result<f64> {
        self.check_context(ctx)?;
        self.check_sequence(seq)?;
        let mut h = self.initial_hidden(ctx);
        let mut total = 0.0;
        for (i, &tok) in seq.iter().enumerate() {
            total += log_softmax(&self.logits(&h))[tok];
            if i + 1 < seq.len() {
                h = self.advance_hidden(&h, tok);
            }
        }
        Ok(total)
    }

    pub(crate) fn check_sequence(&self, seq: &[TokenId]) -> Result<()> {
        let eos = self.eos_id();
        match seq.split_last() {
            None => Err(Error::MalformedSequence("empty sequence".into())),
            Some((&last, _)) if last != eos => Err(Error::MalformedSequence("sequence does not end with eos".into())),
            Some((_, body)) => {
                for &tok in body {
                    self.check_token(tok)?;
                    if tok == eos {
                        return Err(Error::MalformedSequence("eos before the end".into()));
                    }
                }
                Ok(())
            }
        }
    }
}

pub(crate) struct GruGates {
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub n: Array1<f64>,
    pub rh: Array1<f64>,
    pub h_next: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.mapv(|x| x - lse)
}

/// Scoring state: the hidden vector after consuming the prefix.
impl Scorer for ModelParams {
    type State = Array1<f64>;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn start(&self, ctx: &ContextVector) -> Result<Self::State> {
        self.check_context(ctx)?;
        Ok(self.initial_hidden(ctx))
    }

    fn log_probs(&self, state: &Self::State) -> Vec<f64> {
        log_softmax(&self.logits(state)).to_vec()
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State {
        self.advance_hidden(state, token)
    }
}
