//! Curriculum training, evaluation, checkpointing.
//!
//! Training runs up to three stages: short utterances only, the full
//! pretraining corpus, then a fine-tune corpus. Each stage starts from
//! the previous stage's epoch-averaged weights, trains with Adam under a
//! warmup/inverse-sqrt schedule, and snapshots a checkpoint per epoch.
//!
//! Batches are packed by total frame count from a length-sorted utterance
//! list; batch order shuffles per (seed, epoch). Every utterance is
//! processed on its own (the batch loss is the mean of per-utterance
//! losses), so no padding or masking is needed anywhere. Single-threaded
//! runs are bit-reproducible from (config, seed).

mod checkpoint;
mod optim;

pub use checkpoint::{average_checkpoints, Checkpoint, CheckpointMeta};
pub use optim::{lr_at, Adam};

use std::io::Write;

use crate::data::{augment_random_crop, augment_time_mask, center_crop, corpus_cer, AugmentConfig, SyntheticSample};
use crate::decode::{joint_decode, DecodeConfig, JointScorer};
use crate::error::{Error, Result};
use crate::lm::RnnLm;
use crate::model::VsrModel;
use crate::objective::{HyperParams, LossValues};
use crate::rng::{salts, SplitRng};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSource {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone)]
pub struct StageConfig {
    pub id: u32,
    pub source: StageSource,
    /// Keep only utterances at most this long (stage-1 style filtering).
    pub max_duration_s: Option<f64>,
    pub epochs: usize,
    /// Inclusive 1-based epoch window averaged into the stage result.
    pub average_from: usize,
    pub average_to: usize,
}

impl StageConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config(format!("stage {} has zero epochs", self.id)));
        }
        if self.average_from == 0
            || self.average_from > self.average_to
            || self.average_to > self.epochs
        {
            return Err(Error::config(format!(
                "stage {} averaging window {}..{} outside 1..{}",
                self.id, self.average_from, self.average_to, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stages: Vec<StageConfig>,
    pub batch_frames: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub hp: HyperParams,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: vec![
                StageConfig {
                    id: 1,
                    source: StageSource::Pretrain,
                    max_duration_s: Some(0.6),
                    epochs: 4,
                    average_from: 2,
                    average_to: 4,
                },
                StageConfig {
                    id: 2,
                    source: StageSource::Pretrain,
                    max_duration_s: None,
                    epochs: 6,
                    average_from: 4,
                    average_to: 6,
                },
                StageConfig {
                    id: 3,
                    source: StageSource::Finetune,
                    max_duration_s: None,
                    epochs: 3,
                    average_from: 2,
                    average_to: 3,
                },
            ],
            batch_frames: 512,
            base_lr: 3e-3,
            warmup_steps: 150,
            grad_clip: 5.0,
            hp: HyperParams::default(),
            augment: AugmentConfig::for_frames_per_token(3, 16, 16),
        }
    }
}

/// Length-sorted batches capped at `batch_frames` total frames.
fn pack_batches(data: &[SyntheticSample], batch_frames: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_key(|&i| (data[i].video.t, data[i].utterance_id.clone()));
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut frames = 0usize;
    for i in order {
        let t = data[i].video.t;
        if !current.is_empty() && frames + t > batch_frames {
            batches.push(std::mem::take(&mut current));
            frames = 0;
        }
        current.push(i);
        frames += t;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// One step's log line: stable formatting so identical runs produce
/// byte-identical logs.
fn log_step(
    log: &mut dyn Write,
    step: usize,
    stage: u32,
    epoch: usize,
    lr: f64,
    v: &LossValues,
) -> Result<()> {
    writeln!(
        log,
        "step={step} stage={stage} epoch={epoch} lr={lr:.8} ctc={:.6} inter={:.6} left={:.6} right={:.6} attn={:.6} total={:.6}",
        v.ctc, v.inter, v.left, v.right, v.attn, v.total
    )?;
    Ok(())
}

/// Trains one stage in place, returning one checkpoint per epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    model: &VsrModel,
    data: &[SyntheticSample],
    vocab: &Vocab,
    stage: &StageConfig,
    cfg: &TrainConfig,
    seed: u64,
    global_step: &mut usize,
    log: &mut dyn Write,
) -> Result<Vec<Checkpoint>> {
    stage.validate()?;
    let filtered: Vec<&SyntheticSample> = data
        .iter()
        .filter(|s| stage.max_duration_s.is_none_or(|m| s.duration_s <= m))
        .collect();
    if filtered.is_empty() {
        return Err(Error::config(format!(
            "stage {} filter leaves no utterances",
            stage.id
        )));
    }
    let owned: Vec<SyntheticSample> = filtered.into_iter().cloned().collect();
    let batches = pack_batches(&owned, cfg.batch_frames);
    let params = model.params();
    let mut opt = Adam::new(&params, cfg.base_lr, cfg.warmup_steps);
    opt.clip_norm = Some(cfg.grad_clip);
    let root = SplitRng::new(seed);
    let mut checkpoints = Vec::with_capacity(stage.epochs);

    for epoch in 1..=stage.epochs {
        let mut batch_order: Vec<usize> = (0..batches.len()).collect();
        root.derive(salts::SHUFFLE, ((stage.id as u64) << 32) | epoch as u64)
            .shuffle(&mut batch_order);
        for &bi in &batch_order {
            let batch = &batches[bi];
            model.zero_grads();
            let mut sum = LossValues {
                ctc: 0.0,
                inter: 0.0,
                left: 0.0,
                right: 0.0,
                attn: 0.0,
                total: 0.0,
            };
            for &si in batch {
                let sample = &owned[si];
                let mut rng = root.derive(
                    salts::AUGMENT,
                    ((stage.id as u64) << 48) | ((epoch as u64) << 32) | si as u64,
                );
                let masked = augment_time_mask(&sample.video, &cfg.augment, &mut rng);
                let cropped =
                    augment_random_crop(&masked, cfg.augment.crop_h, cfg.augment.crop_w, &mut rng)?;
                let target = vocab.encode(&sample.transcript);
                let (breakdown, _) = model.forward_losses(&cropped, &target, &cfg.hp)?;
                let v = breakdown.values();
                if !v.total.is_finite() {
                    return Err(Error::TrainingLoss { component: "total" });
                }
                sum.ctc += v.ctc;
                sum.inter += v.inter;
                sum.left += v.left;
                sum.right += v.right;
                sum.attn += v.attn;
                sum.total += v.total;
                breakdown.total.scale(1.0 / batch.len() as f64)?.backward()?;
            }
            let n = batch.len() as f64;
            let mean = LossValues {
                ctc: sum.ctc / n,
                inter: sum.inter / n,
                left: sum.left / n,
                right: sum.right / n,
                attn: sum.attn / n,
                total: sum.total / n,
            };
            *global_step += 1;
            log_step(log, *global_step, stage.id, epoch, opt.current_lr(), &mean)?;
            opt.step(&params)?;
        }
        checkpoints.push(Checkpoint::capture(
            &params,
            CheckpointMeta {
                stage: stage.id,
                epoch: epoch as u32,
                seed,
                config_digest: 0,
                note: String::new(),
            },
        ));
    }
    Ok(checkpoints)
}

pub struct CurriculumOutput {
    /// Per-stage, per-epoch checkpoints.
    pub stage_checkpoints: Vec<Vec<Checkpoint>>,
    /// The averaged checkpoint each stage ended with.
    pub stage_averages: Vec<Checkpoint>,
    /// Alias of the last stage average: the final model weights.
    pub final_checkpoint: Checkpoint,
    pub steps: usize,
}

/// Runs the staged curriculum in place on `model`: train stage, average
/// its epoch window, restore the average, continue.
pub fn run_curriculum(
    model: &VsrModel,
    pretrain: &[SyntheticSample],
    finetune: &[SyntheticSample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    seed: u64,
    log: &mut dyn Write,
) -> Result<CurriculumOutput> {
    if cfg.stages.is_empty() {
        return Err(Error::config("curriculum needs at least one stage"));
    }
    let params = model.params();
    let mut stage_checkpoints = Vec::with_capacity(cfg.stages.len());
    let mut stage_averages: Vec<Checkpoint> = Vec::with_capacity(cfg.stages.len());
    let mut steps = 0usize;
    for stage in &cfg.stages {
        let data = match stage.source {
            StageSource::Pretrain => pretrain,
            StageSource::Finetune => finetune,
        };
        let epochs = train_stage(model, data, vocab, stage, cfg, seed, &mut steps, log)?;
        let window: Vec<&Checkpoint> = epochs[stage.average_from - 1..=stage.average_to - 1]
            .iter()
            .collect();
        let averaged = average_checkpoints(&window)?;
        averaged.restore(&params)?;
        stage_checkpoints.push(epochs);
        stage_averages.push(averaged);
    }
    let final_checkpoint = stage_averages.last().expect("at least one stage").clone();
    Ok(CurriculumOutput {
        stage_checkpoints,
        stage_averages,
        final_checkpoint,
        steps,
    })
}

// ── Evaluation ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMethod {
    Joint,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct UtteranceResult {
    pub utterance_id: String,
    pub reference: String,
    pub hypothesis: String,
    pub attn_score: f64,
    pub ctc_score: f64,
    pub lm_score: f64,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub corpus_cer: f64,
    pub utterances: Vec<UtteranceResult>,
}

/// Decodes one utterance (center-cropped) and returns the best
/// hypothesis with its score breakdown.
pub fn decode_utterance(
    model: &VsrModel,
    vocab: &Vocab,
    sample: &SyntheticSample,
    lm: Option<&RnnLm>,
    decode_cfg: &DecodeConfig,
    method: DecodeMethod,
) -> Result<UtteranceResult> {
    let video = center_crop(
        &sample.video,
        model.cfg.frontend.input_h,
        model.cfg.frontend.input_w,
    )?;
    let enc = model.encode(&video)?;
    let ctc_lp = model.ctc_log_probs(&enc.features)?;
    let (tokens, scores) = match method {
        DecodeMethod::Greedy => (crate::ctc::greedy_decode(&ctc_lp)?, (0.0, 0.0, 0.0, 0.0)),
        DecodeMethod::Joint => {
            let scorer = JointScorer {
                decoder: &model.left_decoder,
                ctc_log_probs: &ctc_lp,
                memory: &enc.features,
                lm,
            };
            let hyps = joint_decode(&scorer, decode_cfg)?;
            let best = &hyps[0];
            (best.tokens.clone(), best.breakdown())
        }
    };
    Ok(UtteranceResult {
        utterance_id: sample.utterance_id.clone(),
        reference: sample.transcript.clone(),
        hypothesis: vocab.decode(&tokens)?,
        attn_score: scores.0,
        ctc_score: scores.1,
        lm_score: scores.2,
        combined: scores.3,
    })
}

/// Decodes a dataset and aggregates corpus CER (summed edit distance over
/// summed reference length).
pub fn evaluate(
    model: &VsrModel,
    vocab: &Vocab,
    data: &[SyntheticSample],
    lm: Option<&RnnLm>,
    decode_cfg: &DecodeConfig,
    method: DecodeMethod,
) -> Result<EvalReport> {
    let mut utterances = Vec::with_capacity(data.len());
    for sample in data {
        utterances.push(decode_utterance(model, vocab, sample, lm, decode_cfg, method)?);
    }
    let corpus =
        corpus_cer(utterances.iter().map(|u| (u.reference.as_str(), u.hypothesis.as_str())))?;
    Ok(EvalReport {
        corpus_cer: corpus,
        utterances,
    })
}
