//! Run configuration: plain-text `key = value` files with bracketed
//! section headers (`[model]`, `[data]`, `[curriculum]`, `[decode]`) plus
//! a top-level `seed`. Unknown keys are rejected. Flags override file
//! values, file values override built-in defaults. Every run writes its
//! fully resolved configuration back out, and a 64-bit FNV-1a digest of
//! that canonical dump identifies the configuration in checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{AugmentConfig, DataConfig};
use crate::decode::DecodeConfig;
use crate::encoder::ConformerConfig;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::lm::LmConfig;
use crate::model::ModelConfig;
use crate::objective::HyperParams;
use crate::train::{StageConfig, StageSource, TrainConfig};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    // [model]
    pub d_model: usize,
    pub num_blocks: usize,
    pub attention_heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub interctc_interval: usize,
    pub max_positions: usize,
    pub stem_kernel: (usize, usize, usize),
    pub stem_channels: usize,
    pub trunk_channels: Vec<usize>,
    pub input_height: usize,
    pub input_width: usize,
    pub left_layers: usize,
    pub right_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ffn_dim: usize,
    pub max_target_positions: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    // [data]
    pub alphabet: String,
    pub utterances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub frames_per_token: usize,
    pub noise_sigma: f64,
    pub ambiguous_pairs: Vec<(char, char)>,
    pub frame_height: usize,
    pub frame_width: usize,
    pub branching: usize,
    pub split_train: f64,
    pub split_valid: f64,
    pub split_test: f64,
    // [curriculum]
    pub stages: usize,
    pub stage_epochs: [usize; 3],
    pub stage_average_from: [usize; 3],
    pub stage_average_to: [usize; 3],
    pub stage1_max_duration_s: f64,
    pub batch_frames: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub time_mask_per_24: usize,
    /// 0 means "derive from frames_per_token".
    pub time_mask_max_span: usize,
    pub lm_epochs: usize,
    pub lm_layers: usize,
    pub lm_hidden: usize,
    pub lm_embed: usize,
    pub lm_lr: f64,
    // [decode]
    pub beam_size: usize,
    pub ctc_weight: f64,
    pub lm_weight: f64,
    pub pre_select_factor: f64,
    pub max_len: usize,
    pub length_normalize: bool,
    pub lm_score_eos: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            d_model: 32,
            num_blocks: 6,
            attention_heads: 4,
            ffn_dim: 128,
            conv_kernel: 7,
            interctc_interval: 2,
            max_positions: 256,
            stem_kernel: (5, 7, 7),
            stem_channels: 4,
            trunk_channels: vec![8, 16, 32],
            input_height: 16,
            input_width: 16,
            left_layers: 2,
            right_layers: 1,
            decoder_heads: 4,
            decoder_ffn_dim: 128,
            max_target_positions: 64,
            lambda: 0.1,
            gamma: 0.3,
            alpha: 0.3,
            alphabet: "abcdefghijkl".into(),
            utterances: 2200,
            min_tokens: 2,
            max_tokens: 8,
            frames_per_token: 3,
            noise_sigma: 0.3,
            ambiguous_pairs: Vec::new(),
            frame_height: 16,
            frame_width: 16,
            branching: 3,
            split_train: 0.9,
            split_valid: 0.05,
            split_test: 0.05,
            stages: 3,
            stage_epochs: [4, 6, 3],
            stage_average_from: [2, 4, 2],
            stage_average_to: [4, 6, 3],
            stage1_max_duration_s: 0.6,
            batch_frames: 512,
            base_lr: 3e-3,
            warmup_steps: 150,
            grad_clip: 5.0,
            time_mask_per_24: 1,
            time_mask_max_span: 0,
            lm_epochs: 10,
            lm_layers: 2,
            lm_hidden: 64,
            lm_embed: 32,
            lm_lr: 3e-3,
            beam_size: 8,
            ctc_weight: 0.3,
            lm_weight: 0.1,
            pre_select_factor: 1.5,
            max_len: 0,
            length_normalize: false,
            lm_score_eos: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("cannot parse {key} = {value:?} as bool"))),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse(key, s.trim()))
        .collect()
}

fn parse_pairs(key: &str, value: &str) -> Result<Vec<(char, char)>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|pair| {
            let cs: Vec<char> = pair.trim().chars().collect();
            if cs.len() != 2 {
                return Err(Error::config(format!(
                    "{key}: each ambiguous pair must be two characters, got {pair:?}"
                )));
            }
            Ok((cs[0], cs[1]))
        })
        .collect()
}

impl RunConfig {
    /// Defaults overridden by a config file (when given).
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_text(&text)?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                if !matches!(section.as_str(), "model" | "data" | "curriculum" | "decode") {
                    return Err(Error::config(format!(
                        "unknown section [{section}] on line {}",
                        ln + 1
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {} is not `key = value`: {raw:?}",
                    ln + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            self.set(&section, key, value)?;
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        match full.as_str() {
            "seed" => self.seed = parse(key, value)?,
            "model.d_model" => self.d_model = parse(key, value)?,
            "model.num_blocks" => self.num_blocks = parse(key, value)?,
            "model.attention_heads" => self.attention_heads = parse(key, value)?,
            "model.ffn_dim" => self.ffn_dim = parse(key, value)?,
            "model.conv_kernel" => self.conv_kernel = parse(key, value)?,
            "model.interctc_interval" => self.interctc_interval = parse(key, value)?,
            "model.max_positions" => self.max_positions = parse(key, value)?,
            "model.stem_kernel" => {
                let v = parse_usize_list(key, value)?;
                if v.len() != 3 {
                    return Err(Error::config("stem_kernel needs three extents"));
                }
                self.stem_kernel = (v[0], v[1], v[2]);
            }
            "model.stem_channels" => self.stem_channels = parse(key, value)?,
            "model.trunk_channels" => self.trunk_channels = parse_usize_list(key, value)?,
            "model.input_height" => self.input_height = parse(key, value)?,
            "model.input_width" => self.input_width = parse(key, value)?,
            "model.left_layers" => self.left_layers = parse(key, value)?,
            "model.right_layers" => self.right_layers = parse(key, value)?,
            "model.decoder_heads" => self.decoder_heads = parse(key, value)?,
            "model.decoder_ffn_dim" => self.decoder_ffn_dim = parse(key, value)?,
            "model.max_target_positions" => self.max_target_positions = parse(key, value)?,
            "model.lambda" => self.lambda = parse(key, value)?,
            "model.gamma" => self.gamma = parse(key, value)?,
            "model.alpha" => self.alpha = parse(key, value)?,
            "data.alphabet" => self.alphabet = value.to_string(),
            "data.utterances" => self.utterances = parse(key, value)?,
            "data.min_tokens" => self.min_tokens = parse(key, value)?,
            "data.max_tokens" => self.max_tokens = parse(key, value)?,
            "data.frames_per_token" => self.frames_per_token = parse(key, value)?,
            "data.noise_sigma" => self.noise_sigma = parse(key, value)?,
            "data.ambiguous_pairs" => self.ambiguous_pairs = parse_pairs(key, value)?,
            "data.frame_height" => self.frame_height = parse(key, value)?,
            "data.frame_width" => self.frame_width = parse(key, value)?,
            "data.branching" => self.branching = parse(key, value)?,
            "data.split_train" => self.split_train = parse(key, value)?,
            "data.split_valid" => self.split_valid = parse(key, value)?,
            "data.split_test" => self.split_test = parse(key, value)?,
            "curriculum.stages" => self.stages = parse(key, value)?,
            "curriculum.stage1_epochs" => self.stage_epochs[0] = parse(key, value)?,
            "curriculum.stage2_epochs" => self.stage_epochs[1] = parse(key, value)?,
            "curriculum.stage3_epochs" => self.stage_epochs[2] = parse(key, value)?,
            "curriculum.stage1_average_from" => self.stage_average_from[0] = parse(key, value)?,
            "curriculum.stage2_average_from" => self.stage_average_from[1] = parse(key, value)?,
            "curriculum.stage3_average_from" => self.stage_average_from[2] = parse(key, value)?,
            "curriculum.stage1_average_to" => self.stage_average_to[0] = parse(key, value)?,
            "curriculum.stage2_average_to" => self.stage_average_to[1] = parse(key, value)?,
            "curriculum.stage3_average_to" => self.stage_average_to[2] = parse(key, value)?,
            "curriculum.stage1_max_duration_s" => {
                self.stage1_max_duration_s = parse(key, value)?
            }
            "curriculum.batch_frames" => self.batch_frames = parse(key, value)?,
            "curriculum.base_lr" => self.base_lr = parse(key, value)?,
            "curriculum.warmup_steps" => self.warmup_steps = parse(key, value)?,
            "curriculum.grad_clip" => self.grad_clip = parse(key, value)?,
            "curriculum.time_mask_per_24" => self.time_mask_per_24 = parse(key, value)?,
            "curriculum.time_mask_max_span" => self.time_mask_max_span = parse(key, value)?,
            "curriculum.lm_epochs" => self.lm_epochs = parse(key, value)?,
            "curriculum.lm_layers" => self.lm_layers = parse(key, value)?,
            "curriculum.lm_hidden" => self.lm_hidden = parse(key, value)?,
            "curriculum.lm_embed" => self.lm_embed = parse(key, value)?,
            "curriculum.lm_lr" => self.lm_lr = parse(key, value)?,
            "decode.beam_size" => self.beam_size = parse(key, value)?,
            "decode.ctc_weight" => self.ctc_weight = parse(key, value)?,
            "decode.lm_weight" => self.lm_weight = parse(key, value)?,
            "decode.pre_select_factor" => self.pre_select_factor = parse(key, value)?,
            "decode.max_len" => self.max_len = parse(key, value)?,
            "decode.length_normalize" => self.length_normalize = parse_bool(key, value)?,
            "decode.lm_score_eos" => self.lm_score_eos = parse_bool(key, value)?,
            _ => {
                return Err(Error::config(format!("unknown configuration key {full:?}")));
            }
        }
        Ok(())
    }

    /// Canonical dump: every key in a fixed order. Parsing the dump
    /// reproduces the config; its digest identifies the run.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "d_model = {}", self.d_model);
        let _ = writeln!(s, "num_blocks = {}", self.num_blocks);
        let _ = writeln!(s, "attention_heads = {}", self.attention_heads);
        let _ = writeln!(s, "ffn_dim = {}", self.ffn_dim);
        let _ = writeln!(s, "conv_kernel = {}", self.conv_kernel);
        let _ = writeln!(s, "interctc_interval = {}", self.interctc_interval);
        let _ = writeln!(s, "max_positions = {}", self.max_positions);
        let _ = writeln!(
            s,
            "stem_kernel = {},{},{}",
            self.stem_kernel.0, self.stem_kernel.1, self.stem_kernel.2
        );
        let _ = writeln!(s, "stem_channels = {}", self.stem_channels);
        let trunk: Vec<String> = self.trunk_channels.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "trunk_channels = {}", trunk.join(","));
        let _ = writeln!(s, "input_height = {}", self.input_height);
        let _ = writeln!(s, "input_width = {}", self.input_width);
        let _ = writeln!(s, "left_layers = {}", self.left_layers);
        let _ = writeln!(s, "right_layers = {}", self.right_layers);
        let _ = writeln!(s, "decoder_heads = {}", self.decoder_heads);
        let _ = writeln!(s, "decoder_ffn_dim = {}", self.decoder_ffn_dim);
        let _ = writeln!(s, "max_target_positions = {}", self.max_target_positions);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "alphabet = {}", self.alphabet);
        let _ = writeln!(s, "utterances = {}", self.utterances);
        let _ = writeln!(s, "min_tokens = {}", self.min_tokens);
        let _ = writeln!(s, "max_tokens = {}", self.max_tokens);
        let _ = writeln!(s, "frames_per_token = {}", self.frames_per_token);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let pairs: Vec<String> = self
            .ambiguous_pairs
            .iter()
            .map(|(a, b)| format!("{a}{b}"))
            .collect();
        let _ = writeln!(s, "ambiguous_pairs = {}", pairs.join(","));
        let _ = writeln!(s, "frame_height = {}", self.frame_height);
        let _ = writeln!(s, "frame_width = {}", self.frame_width);
        let _ = writeln!(s, "branching = {}", self.branching);
        let _ = writeln!(s, "split_train = {}", self.split_train);
        let _ = writeln!(s, "split_valid = {}", self.split_valid);
        let _ = writeln!(s, "split_test = {}", self.split_test);
        let _ = writeln!(s, "\n[curriculum]");
        let _ = writeln!(s, "stages = {}", self.stages);
        for i in 0..3 {
            let _ = writeln!(s, "stage{}_epochs = {}", i + 1, self.stage_epochs[i]);
            let _ = writeln!(
                s,
                "stage{}_average_from = {}",
                i + 1,
                self.stage_average_from[i]
            );
            let _ = writeln!(s, "stage{}_average_to = {}", i + 1, self.stage_average_to[i]);
        }
        let _ = writeln!(s, "stage1_max_duration_s = {}", self.stage1_max_duration_s);
        let _ = writeln!(s, "batch_frames = {}", self.batch_frames);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "warmup_steps = {}", self.warmup_steps);
        let _ = writeln!(s, "grad_clip = {}", self.grad_clip);
        let _ = writeln!(s, "time_mask_per_24 = {}", self.time_mask_per_24);
        let _ = writeln!(s, "time_mask_max_span = {}", self.time_mask_max_span);
        let _ = writeln!(s, "lm_epochs = {}", self.lm_epochs);
        let _ = writeln!(s, "lm_layers = {}", self.lm_layers);
        let _ = writeln!(s, "lm_hidden = {}", self.lm_hidden);
        let _ = writeln!(s, "lm_embed = {}", self.lm_embed);
        let _ = writeln!(s, "lm_lr = {}", self.lm_lr);
        let _ = writeln!(s, "\n[decode]");
        let _ = writeln!(s, "beam_size = {}", self.beam_size);
        let _ = writeln!(s, "ctc_weight = {}", self.ctc_weight);
        let _ = writeln!(s, "lm_weight = {}", self.lm_weight);
        let _ = writeln!(s, "pre_select_factor = {}", self.pre_select_factor);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "length_normalize = {}", self.length_normalize);
        let _ = writeln!(s, "lm_score_eos = {}", self.lm_score_eos);
        s
    }

    /// FNV-1a of the canonical dump.
    pub fn digest(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.dump().bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }

    // ── Projections into component configs ─────────────────────────────

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            frontend: FrontendConfig {
                stem_kernel: self.stem_kernel,
                stem_channels: self.stem_channels,
                trunk_channels: self.trunk_channels.clone(),
                input_h: self.input_height,
                input_w: self.input_width,
                d_model: self.d_model,
            },
            encoder: ConformerConfig {
                num_blocks: self.num_blocks,
                d_model: self.d_model,
                heads: self.attention_heads,
                conv_kernel: self.conv_kernel,
                ffn_dim: self.ffn_dim,
                interctc_interval: self.interctc_interval,
                max_positions: self.max_positions,
            },
            left_layers: self.left_layers,
            right_layers: self.right_layers,
            decoder_heads: self.decoder_heads,
            decoder_ffn_dim: self.decoder_ffn_dim,
            max_target_positions: self.max_target_positions,
            vocab_size,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            alphabet: self.alphabet.chars().collect(),
            utterance_count: self.utterances,
            min_tokens: self.min_tokens,
            max_tokens: self.max_tokens,
            frames_per_token: self.frames_per_token,
            noise_sigma: self.noise_sigma,
            ambiguous_pairs: self.ambiguous_pairs.clone(),
            frame_h: self.frame_height,
            frame_w: self.frame_width,
            frame_rate: 25.0,
            branching: self.branching,
        }
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            lambda: self.lambda,
            gamma: self.gamma,
            alpha: self.alpha,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        let mut a = AugmentConfig::for_frames_per_token(
            self.frames_per_token,
            self.input_height,
            self.input_width,
        );
        a.masks_per_24_frames = self.time_mask_per_24;
        if self.time_mask_max_span > 0 {
            a.max_span = self.time_mask_max_span;
        }
        a
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        if !(1..=3).contains(&self.stages) {
            return Err(Error::config("stages must be 1, 2, or 3"));
        }
        let mut stages = Vec::new();
        for i in 0..self.stages {
            let source = if self.stages == 3 && i == 2 {
                StageSource::Finetune
            } else {
                StageSource::Pretrain
            };
            stages.push(StageConfig {
                id: (i + 1) as u32,
                source,
                max_duration_s: if i == 0 && self.stages > 1 {
                    Some(self.stage1_max_duration_s)
                } else {
                    None
                },
                epochs: self.stage_epochs[i],
                average_from: self.stage_average_from[i],
                average_to: self.stage_average_to[i],
            });
        }
        Ok(TrainConfig {
            stages,
            batch_frames: self.batch_frames,
            base_lr: self.base_lr,
            warmup_steps: self.warmup_steps,
            grad_clip: self.grad_clip,
            hp: self.hyper_params(),
            augment: self.augment_config(),
        })
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            layers: self.lm_layers,
            hidden: self.lm_hidden,
            embed_dim: self.lm_embed,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            ctc_weight: self.ctc_weight,
            lm_weight: self.lm_weight,
            beam_size: self.beam_size,
            max_len: self.max_len,
            pre_select_factor: self.pre_select_factor,
            length_normalize: self.length_normalize,
            lm_score_eos: self.lm_score_eos,
        }
    }

    /// Split sizes from the ratio keys: train and valid round to nearest,
    /// test takes the rest.
    pub fn split_counts(&self) -> Result<(usize, usize, usize)> {
        let total = self.utterances;
        let sum = self.split_train + self.split_valid + self.split_test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios sum to {sum}, expected 1")));
        }
        let n_train = (self.split_train * total as f64).round() as usize;
        let n_valid = (self.split_valid * total as f64).round() as usize;
        if n_train + n_valid > total {
            return Err(Error::config("split ratios leave no test utterances"));
        }
        Ok((n_train, n_valid, total - n_train - n_valid))
    }
}
