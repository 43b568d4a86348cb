//! Shared network building blocks: linear layers, affine layer norm,
//! embeddings, multi-head attention, and feed-forward stacks.
//!
//! Initialization is uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for all
//! weight matrices and convolution kernels, zero for biases; embedding
//! and positional tables use fan_in = feature dimension. Every layer
//! exposes its parameters as (name, tensor) pairs in a stable order so
//! the optimizer, checkpoints, and averaging all see the same layout.

use crate::error::Result;
use crate::rng::SplitRng;
use crate::tensor::Tensor;

pub type NamedParams = Vec<(String, Tensor)>;

pub fn prefixed(prefix: &str, params: NamedParams) -> NamedParams {
    params
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

// ── Linear ─────────────────────────────────────────────────────────────

#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut SplitRng) -> Linear {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: Tensor::init_uniform(&[d_in, d_out], bound, rng),
            bias: Tensor::init_zeros(&[d_out]),
        }
    }

    /// x [n, in] -> [n, out].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_rowvec(&self.bias)
    }

    pub fn params(&self) -> NamedParams {
        vec![
            ("weight".into(), self.weight.clone()),
            ("bias".into(), self.bias.clone()),
        ]
    }
}

// ── Layer norm with affine parameters ──────────────────────────────────

#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param(&[dim], vec![1.0; dim]).expect("finite"),
            beta: Tensor::init_zeros(&[dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(self.eps)?
            .mul_rowvec(&self.gamma)?
            .add_rowvec(&self.beta)
    }

    pub fn params(&self) -> NamedParams {
        vec![
            ("gamma".into(), self.gamma.clone()),
            ("beta".into(), self.beta.clone()),
        ]
    }
}

// ── Embedding and learned positions ────────────────────────────────────

#[derive(Clone)]
pub struct Embedding {
    pub table: Tensor, // [vocab, dim]
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut SplitRng) -> Embedding {
        let bound = 1.0 / (dim as f64).sqrt();
        Embedding {
            table: Tensor::init_uniform(&[vocab, dim], bound, rng),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        self.table.gather_rows(ids)
    }

    pub fn params(&self) -> NamedParams {
        vec![("table".into(), self.table.clone())]
    }
}

/// Learned absolute positional encoding, added once at the bottom of a
/// stack: rows 0..T of the table are added to the input.
#[derive(Clone)]
pub struct PositionTable {
    pub table: Tensor, // [max_positions, dim]
}

impl PositionTable {
    pub fn new(max_positions: usize, dim: usize, rng: &mut SplitRng) -> PositionTable {
        let bound = 1.0 / (dim as f64).sqrt();
        PositionTable {
            table: Tensor::init_uniform(&[max_positions, dim], bound, rng),
        }
    }

    pub fn add_to(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.shape()[0];
        if t > self.table.shape()[0] {
            return Err(crate::error::Error::contract(format!(
                "sequence length {t} exceeds max positions {}",
                self.table.shape()[0]
            )));
        }
        x.add(&self.table.narrow(0, 0, t)?)
    }

    /// Single position row, for incremental decoding.
    pub fn row(&self, pos: usize) -> Result<Tensor> {
        self.table.narrow(0, pos, 1)
    }

    pub fn params(&self) -> NamedParams {
        vec![("pos".into(), self.table.clone())]
    }
}

// ── Multi-head attention ───────────────────────────────────────────────

#[derive(Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(d_model: usize, heads: usize, rng: &mut SplitRng) -> MultiHeadAttention {
        assert!(d_model % heads == 0, "d_model must divide into heads");
        MultiHeadAttention {
            wq: Linear::new(d_model, d_model, rng),
            wk: Linear::new(d_model, d_model, rng),
            wv: Linear::new(d_model, d_model, rng),
            wo: Linear::new(d_model, d_model, rng),
            heads,
            d_model,
        }
    }

    /// Full attention: queries [Tq, d] against keys/values [Tk, d].
    /// `causal` restricts query i to keys 0..=i (requires Tq == Tk).
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor, causal: bool) -> Result<Tensor> {
        let q = self.wq.forward(q_in)?;
        let k = self.wk.forward(kv_in)?;
        let v = self.wv.forward(kv_in)?;
        self.attend(&q, &k, &v, causal)
    }

    fn attend(&self, q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> Result<Tensor> {
        let head_dim = self.d_model / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let tq = q.shape()[0];
        let tk = k.shape()[0];
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(1, h * head_dim, head_dim)?;
            let kh = k.narrow(1, h * head_dim, head_dim)?;
            let vh = v.narrow(1, h * head_dim, head_dim)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale)?;
            let attn = if causal {
                debug_assert_eq!(tq, tk);
                scores.softmax_causal(tq)?
            } else {
                scores.softmax(1)?
            };
            outs.push(attn.matmul(&vh)?);
        }
        self.wo.forward(&Tensor::concat(1, &outs)?)
    }

    /// Incremental attention for one new query row against cached
    /// projected keys/values [Tk, d]. No masking: the cache contains
    /// exactly the visible positions.
    pub fn forward_one(&self, q_row: &Tensor, k_cache: &Tensor, v_cache: &Tensor) -> Result<Tensor> {
        let q = self.wq.forward(q_row)?;
        self.attend(&q, k_cache, v_cache, false)
    }

    /// Projected keys and values for caching.
    pub fn project_kv(&self, kv_in: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.wk.forward(kv_in)?, self.wv.forward(kv_in)?))
    }

    pub fn params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        out.extend(prefixed("q", self.wq.params()));
        out.extend(prefixed("k", self.wk.params()));
        out.extend(prefixed("v", self.wv.params()));
        out.extend(prefixed("o", self.wo.params()));
        out
    }
}

// ── Feed-forward ───────────────────────────────────────────────────────

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
}

#[derive(Clone)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new(d_model: usize, hidden: usize, activation: Activation, rng: &mut SplitRng) -> Self {
        FeedForward {
            w1: Linear::new(d_model, hidden, rng),
            w2: Linear::new(hidden, d_model, rng),
            activation,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.w1.forward(x)?;
        let h = match self.activation {
            Activation::Relu => h.relu()?,
            Activation::Swish => h.swish()?,
        };
        self.w2.forward(&h)
    }

    pub fn params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        out.extend(prefixed("w1", self.w1.params()));
        out.extend(prefixed("w2", self.w2.params()));
        out
    }
}
