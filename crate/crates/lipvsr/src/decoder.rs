//! Bi-directional transformer decoding over encoder features.
//!
//! Two independent decoders are trained jointly: the left decoder reads
//! the target forward, the right decoder reads it reversed, and their
//! teacher-forced losses combine as (1 - alpha) * left + alpha * right.
//! Both predict an end-of-sequence step after the last token. Only the
//! left decoder runs at inference, one token at a time with cached
//! self-attention keys/values.

use crate::error::{Error, Result};
use crate::nn::{prefixed, Activation, Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention, NamedParams, PositionTable};
use crate::rng::SplitRng;
use crate::tensor::Tensor;
use crate::vocab::{TokenId, SOS_EOS};

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 2,
            d_model: 32,
            heads: 4,
            ffn_dim: 128,
            max_positions: 64,
        }
    }
}

struct DecoderLayer {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    fn new(cfg: &DecoderConfig, rng: &mut SplitRng) -> DecoderLayer {
        DecoderLayer {
            self_norm: LayerNorm::new(cfg.d_model),
            self_attn: MultiHeadAttention::new(cfg.d_model, cfg.heads, rng),
            cross_norm: LayerNorm::new(cfg.d_model),
            cross_attn: MultiHeadAttention::new(cfg.d_model, cfg.heads, rng),
            ffn_norm: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::new(cfg.d_model, cfg.ffn_dim, Activation::Relu, rng),
        }
    }

    fn forward(&self, x: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let normed = self.self_norm.forward(x)?;
        let x = x.add(&self.self_attn.forward(&normed, &normed, true)?)?;
        let x = x.add(
            &self
                .cross_attn
                .forward(&self.cross_norm.forward(&x)?, memory, false)?,
        )?;
        let x = x.add(&self.ffn.forward(&self.ffn_norm.forward(&x)?)?)?;
        Ok(x)
    }

    fn params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        out.extend(prefixed("self_norm", self.self_norm.params()));
        out.extend(prefixed("self_attn", self.self_attn.params()));
        out.extend(prefixed("cross_norm", self.cross_norm.params()));
        out.extend(prefixed("cross_attn", self.cross_attn.params()));
        out.extend(prefixed("ffn_norm", self.ffn_norm.params()));
        out.extend(prefixed("ffn", self.ffn.params()));
        out
    }
}

/// One direction of the bi-transformer (the right decoder is this same
/// machinery fed the reversed target).
pub struct TransformerDecoder {
    pub cfg: DecoderConfig,
    embed: Embedding,
    positions: PositionTable,
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
    out_proj: Linear,
}

/// Incremental decoding state: per-layer caches of the *input-side*
/// projected keys/values for self-attention, plus the memory projections
/// for cross-attention (computed once). Cloning is cheap — tensors are
/// shared handles — so each beam hypothesis owns its own state.
#[derive(Clone)]
pub struct DecoderState {
    /// Tokens consumed so far (starting with sos).
    len: usize,
    /// Per layer: normed-input K/V caches for self-attention.
    self_kv: Vec<(Tensor, Tensor)>,
    /// Per layer: projected memory K/V for cross-attention.
    cross_kv: Vec<(Tensor, Tensor)>,
}

impl DecoderState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl TransformerDecoder {
    pub fn new(cfg: DecoderConfig, vocab_size: usize, rng: &mut SplitRng) -> Result<TransformerDecoder> {
        if cfg.d_model % cfg.heads != 0 {
            return Err(Error::config("decoder d_model must divide into heads"));
        }
        Ok(TransformerDecoder {
            embed: Embedding::new(vocab_size, cfg.d_model, rng),
            positions: PositionTable::new(cfg.max_positions, cfg.d_model, rng),
            layers: (0..cfg.layers).map(|_| DecoderLayer::new(&cfg, rng)).collect(),
            final_norm: LayerNorm::new(cfg.d_model),
            out_proj: Linear::new(cfg.d_model, vocab_size, rng),
            cfg,
        })
    }

    /// Teacher-forced pass: input <sos>, y_1..y_L predicting
    /// y_1..y_L, <eos>. Returns (negative log-likelihood summed over the
    /// L+1 steps, per-step log-probabilities [L+1, V]).
    pub fn forward_loss(&self, memory: &Tensor, target: &[TokenId]) -> Result<(Tensor, Tensor)> {
        if target.is_empty() {
            return Err(Error::contract("decoder target must be non-empty"));
        }
        let log_probs = self.forward_logprobs(memory, target)?;
        let v = log_probs.shape()[1];
        let mut wanted: Vec<usize> = Vec::with_capacity(target.len() + 1);
        for (step, &y) in target.iter().enumerate() {
            wanted.push(step * v + y);
        }
        wanted.push(target.len() * v + SOS_EOS);
        let picked = log_probs.gather(&wanted)?;
        let loss = picked.sum_all()?.scale(-1.0)?;
        Ok((loss, log_probs))
    }

    /// Full teacher-forced log-probabilities [L+1, V] for input
    /// <sos>, y_1..y_L.
    pub fn forward_logprobs(&self, memory: &Tensor, target: &[TokenId]) -> Result<Tensor> {
        let mut ids = Vec::with_capacity(target.len() + 1);
        ids.push(SOS_EOS);
        ids.extend_from_slice(target);
        let mut x = self.positions.add_to(&self.embed.forward(&ids)?)?;
        for layer in &self.layers {
            x = layer.forward(&x, memory)?;
        }
        let x = self.final_norm.forward(&x)?;
        self.out_proj.forward(&x)?.log_softmax(1)
    }

    // ── Incremental decoding ───────────────────────────────────────────

    /// Fresh state bound to `memory` (the encoder output).
    pub fn init_state(&self, memory: &Tensor) -> Result<DecoderState> {
        let mut cross_kv = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cross_kv.push(layer.cross_attn.project_kv(memory)?);
        }
        Ok(DecoderState {
            len: 0,
            self_kv: vec![],
            cross_kv,
        })
    }

    /// Consumes one token (the first call passes sos) and returns the
    /// next-token log-probabilities plus the extended state. Chained
    /// steps match the corresponding column of a full teacher-forced
    /// pass to machine precision.
    pub fn step(&self, state: &DecoderState, token: TokenId) -> Result<(Vec<f64>, DecoderState)> {
        if state.cross_kv.len() != self.layers.len() {
            return Err(Error::contract("decoder state belongs to a different model"));
        }
        if state.len == 0 && token != SOS_EOS {
            return Err(Error::contract("first decoder step must consume sos"));
        }
        let pos = state.len;
        let embedded = self
            .embed
            .forward(&[token])?
            .add(&self.positions.row(pos)?)?;
        let mut x = embedded;
        let mut new_self_kv = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let normed = layer.self_norm.forward(&x)?;
            let (k_new, v_new) = layer.self_attn.project_kv(&normed)?;
            let (k_all, v_all) = if pos == 0 {
                (k_new, v_new)
            } else {
                let (k_prev, v_prev) = &state.self_kv[li];
                (
                    Tensor::concat(0, &[k_prev.clone(), k_new])?,
                    Tensor::concat(0, &[v_prev.clone(), v_new])?,
                )
            };
            let attended = layer.self_attn.forward_one(&normed, &k_all, &v_all)?;
            new_self_kv.push((k_all, v_all));
            let x1 = x.add(&attended)?;
            let (ck, cv) = &state.cross_kv[li];
            let crossed = layer
                .cross_attn
                .forward_one(&layer.cross_norm.forward(&x1)?, ck, cv)?;
            let x2 = x1.add(&crossed)?;
            x = x2.add(&layer.ffn.forward(&layer.ffn_norm.forward(&x2)?)?)?;
        }
        let x = self.final_norm.forward(&x)?;
        let log_probs = self.out_proj.forward(&x)?.log_softmax(1)?;
        Ok((
            log_probs.data_vec(),
            DecoderState {
                len: pos + 1,
                self_kv: new_self_kv,
                cross_kv: state.cross_kv.clone(),
            },
        ))
    }

    pub fn params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        out.extend(prefixed("embed", self.embed.params()));
        out.extend(self.positions.params());
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("layer{i}"), l.params()));
        }
        out.extend(prefixed("final_norm", self.final_norm.params()));
        out.extend(prefixed("out_proj", self.out_proj.params()));
        out
    }
}

/// Convex combination of the two directional losses.
pub fn attention_loss(left: &Tensor, right: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
    }
    left.scale(1.0 - alpha)?.add(&right.scale(alpha)?)
}
