//! The full recognizer: visual front-end, Conformer encoder with
//! intermediate CTC conditioning, output CTC head, and the two
//! directional transformer decoders.

use crate::ctc;
use crate::data::Video;
use crate::decoder::{DecoderConfig, TransformerDecoder};
use crate::encoder::{ConformerConfig, ConformerEncoder, EncoderOutput};
use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendConfig};
use crate::nn::{prefixed, Linear, NamedParams};
use crate::objective::{total_loss, HyperParams, LossBreakdown};
use crate::rng::{salts, SplitRng};
use crate::tensor::Tensor;
use crate::vocab::TokenId;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub frontend: FrontendConfig,
    pub encoder: ConformerConfig,
    pub left_layers: usize,
    pub right_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ffn_dim: usize,
    pub max_target_positions: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// The reference micro model used by the gradient-check harness:
    /// 8-wide everything, 2 encoder blocks with one intermediate module,
    /// one decoder layer per direction, 8x8 frames.
    pub fn micro(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            frontend: FrontendConfig {
                stem_kernel: (5, 7, 7),
                stem_channels: 2,
                trunk_channels: vec![4],
                input_h: 8,
                input_w: 8,
                d_model: 8,
            },
            encoder: ConformerConfig {
                num_blocks: 2,
                d_model: 8,
                heads: 2,
                conv_kernel: 3,
                ffn_dim: 16,
                interctc_interval: 1,
                max_positions: 16,
            },
            left_layers: 1,
            right_layers: 1,
            decoder_heads: 2,
            decoder_ffn_dim: 16,
            max_target_positions: 12,
            vocab_size,
        }
    }

    /// Toy-scale defaults for a given vocabulary.
    pub fn toy(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            frontend: FrontendConfig::default(),
            encoder: ConformerConfig::default(),
            left_layers: 2,
            right_layers: 1,
            decoder_heads: 4,
            decoder_ffn_dim: 128,
            max_target_positions: 64,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frontend.d_model != self.encoder.d_model {
            return Err(Error::config(format!(
                "frontend d_model {} != encoder d_model {}",
                self.frontend.d_model, self.encoder.d_model
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::config("vocabulary must hold specials plus characters"));
        }
        if self.left_layers == 0 || self.right_layers == 0 {
            return Err(Error::config("both decoders need at least one layer"));
        }
        self.frontend.validate()?;
        self.encoder.validate()
    }

    fn decoder_cfg(&self, layers: usize) -> DecoderConfig {
        DecoderConfig {
            layers,
            d_model: self.encoder.d_model,
            heads: self.decoder_heads,
            ffn_dim: self.decoder_ffn_dim,
            max_positions: self.max_target_positions,
        }
    }
}

pub struct VsrModel {
    pub cfg: ModelConfig,
    pub frontend: Frontend,
    pub encoder: ConformerEncoder,
    pub ctc_head: Linear,
    pub left_decoder: TransformerDecoder,
    pub right_decoder: TransformerDecoder,
}

impl VsrModel {
    /// Builds and initializes the model from one deterministic stream of
    /// the run seed; the same (config, seed) always yields bit-identical
    /// weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<VsrModel> {
        cfg.validate()?;
        let mut rng = SplitRng::new(seed).derive(salts::INIT, 0);
        let frontend = Frontend::new(cfg.frontend.clone(), &mut rng)?;
        let encoder = ConformerEncoder::new(cfg.encoder.clone(), cfg.vocab_size, &mut rng)?;
        let ctc_head = Linear::new(cfg.encoder.d_model, cfg.vocab_size, &mut rng);
        let left_decoder =
            TransformerDecoder::new(cfg.decoder_cfg(cfg.left_layers), cfg.vocab_size, &mut rng)?;
        let right_decoder =
            TransformerDecoder::new(cfg.decoder_cfg(cfg.right_layers), cfg.vocab_size, &mut rng)?;
        Ok(VsrModel {
            cfg,
            frontend,
            encoder,
            ctc_head,
            left_decoder,
            right_decoder,
        })
    }

    /// Video -> encoder output (final features plus intermediates).
    pub fn encode(&self, video: &Video) -> Result<EncoderOutput> {
        let features = self.frontend.forward(video)?;
        self.encoder.forward(&features)
    }

    /// Output-layer CTC log-probabilities [T, V] over encoder features.
    pub fn ctc_log_probs(&self, encoded: &Tensor) -> Result<Tensor> {
        self.ctc_head.forward(encoded)?.log_softmax(1)
    }

    /// Full training objective for one utterance. Returns the breakdown
    /// plus a flag for targets the CTC lattice cannot align (those
    /// contribute only the attention terms).
    pub fn forward_losses(
        &self,
        video: &Video,
        target: &[TokenId],
        hp: &HyperParams,
    ) -> Result<(LossBreakdown, bool)> {
        if target.is_empty() {
            return Err(Error::contract("training target must be non-empty"));
        }
        let enc = self.encode(video)?;
        let mut infeasible = false;
        let ctc_lp = self.ctc_log_probs(&enc.features)?;
        let ctc = match ctc::ctc_loss(&ctc_lp, target)? {
            r if r.infeasible => {
                infeasible = true;
                Tensor::scalar(0.0)
            }
            r => r.loss.expect("feasible"),
        };
        let mut inter_each = Vec::with_capacity(enc.intermediates.len());
        for inter in &enc.intermediates {
            let r = ctc::ctc_loss(&inter.log_probs, target)?;
            if r.infeasible {
                infeasible = true;
                inter_each.push(Tensor::scalar(0.0));
            } else {
                inter_each.push(r.loss.expect("feasible"));
            }
        }
        // lambda = 1 trains the CTC branch alone; the decoders would only
        // receive zero-weighted gradients, so skip their forward passes.
        let (left, right) = if hp.lambda == 1.0 {
            (Tensor::scalar(0.0), Tensor::scalar(0.0))
        } else {
            let (left, _) = self.left_decoder.forward_loss(&enc.features, target)?;
            let reversed: Vec<TokenId> = target.iter().rev().copied().collect();
            let (right, _) = self.right_decoder.forward_loss(&enc.features, &reversed)?;
            (left, right)
        };
        let breakdown = total_loss(ctc, inter_each, left, right, hp)?;
        Ok((breakdown, infeasible))
    }

    /// Stable, named view of every parameter.
    pub fn params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        out.extend(prefixed("frontend", self.frontend.params()));
        out.extend(prefixed("encoder", self.encoder.params()));
        out.extend(prefixed("ctc_head", self.ctc_head.params()));
        out.extend(prefixed("left_dec", self.left_decoder.params()));
        out.extend(prefixed("right_dec", self.right_decoder.params()));
        out
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    fn micro_config(vocab_size: usize) -> ModelConfig {
        ModelConfig::micro(vocab_size)
    }

    fn video(t: usize, seed: u64) -> Video {
        let mut rng = SplitRng::new(seed);
        Video::new(
            (0..t * 64).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            t,
            8,
            8,
            25.0,
        )
        .unwrap()
    }

    #[test]
    fn loss_components_are_finite_and_positive() {
        let model = VsrModel::new(micro_config(6), 7).unwrap();
        let (b, infeasible) = model
            .forward_losses(&video(5, 1), &[3, 4], &HyperParams::default())
            .unwrap();
        assert!(!infeasible);
        let v = b.values();
        for (name, x) in [
            ("ctc", v.ctc),
            ("inter", v.inter),
            ("left", v.left),
            ("right", v.right),
            ("attn", v.attn),
            ("total", v.total),
        ] {
            assert!(x.is_finite() && x > 0.0, "{name} = {x}");
        }
        assert_eq!(b.inter_each.len(), 1);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = VsrModel::new(micro_config(6), 11).unwrap();
        let b = VsrModel::new(micro_config(6), 11).unwrap();
        for ((na, pa), (nb, pb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(pa.data_vec(), pb.data_vec());
        }
        let c = VsrModel::new(micro_config(6), 12).unwrap();
        let differs = a
            .params()
            .iter()
            .zip(c.params().iter())
            .any(|((_, pa), (_, pc))| pa.data_vec() != pc.data_vec());
        assert!(differs);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let model = VsrModel::new(micro_config(6), 13).unwrap();
        let (b, _) = model
            .forward_losses(&video(6, 2), &[3, 4, 5], &HyperParams::default())
            .unwrap();
        b.total.backward().unwrap();
        let missing: Vec<String> = model
            .params()
            .into_iter()
            .filter(|(name, p)| {
                // Positions past the sequence length legitimately get none.
                !name.contains("pos")
                    && !p
                        .grad_vec()
                        .map(|g| g.iter().any(|v| *v != 0.0))
                        .unwrap_or(false)
            })
            .map(|(name, _)| name)
            .collect();
        assert!(missing.is_empty(), "no gradient for {missing:?}");
    }

    #[test]
    fn infeasible_target_keeps_attention_training_alive() {
        let model = VsrModel::new(micro_config(6), 14).unwrap();
        // 8 tokens with repeats cannot align into 2 frames.
        let (b, infeasible) = model
            .forward_losses(&video(2, 3), &[3, 3, 4, 4, 5, 5, 3, 3], &HyperParams::default())
            .unwrap();
        assert!(infeasible);
        assert!(b.total.item().is_finite());
    }
}
