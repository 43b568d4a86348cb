//! Overfit a 10-utterance corpus with the micro recognizer and watch the
//! combined objective collapse; the standard smoke test that the whole
//! training loop (losses, gradients, Adam, schedule) fits together.
//!
//!     cargo run --release --example overfit_tiny

use lipvsr::data::{generate_dataset, AugmentConfig, DataConfig};
use lipvsr::model::{ModelConfig, VsrModel};
use lipvsr::objective::HyperParams;
use lipvsr::train::{evaluate, run_curriculum, DecodeMethod, StageConfig, StageSource, TrainConfig};
use lipvsr::vocab::Vocab;

fn main() -> lipvsr::Result<()> {
    let data_cfg = DataConfig {
        alphabet: "abc".chars().collect(),
        utterance_count: 10,
        min_tokens: 1,
        max_tokens: 3,
        frames_per_token: 3,
        noise_sigma: 0.1,
        frame_h: 8,
        frame_w: 8,
        branching: 2,
        ..DataConfig::default()
    };
    let samples = generate_dataset(&data_cfg, 4)?;
    let transcripts: Vec<String> = samples.iter().map(|s| s.transcript.clone()).collect();
    let vocab = Vocab::build_from_corpus(&transcripts)?;
    let model = VsrModel::new(ModelConfig::micro(vocab.size()), 5)?;

    let train_cfg = TrainConfig {
        stages: vec![StageConfig {
            id: 1,
            source: StageSource::Pretrain,
            max_duration_s: None,
            epochs: 80,
            average_from: 80,
            average_to: 80,
        }],
        batch_frames: 64,
        base_lr: 3e-3,
        warmup_steps: 30,
        grad_clip: 5.0,
        hp: HyperParams::default(),
        augment: AugmentConfig {
            masks_per_24_frames: 0,
            max_span: 1,
            crop_h: 8,
            crop_w: 8,
        },
    };
    let mut log = Vec::new();
    run_curriculum(&model, &samples, &samples, &vocab, &train_cfg, 6, &mut log)?;
    let text = String::from_utf8_lossy(&log);
    let totals: Vec<&str> = text.lines().collect();
    for line in totals
        .iter()
        .step_by((totals.len() / 8).max(1))
        .chain(totals.last().into_iter())
    {
        println!("{line}");
    }

    let report = evaluate(
        &model,
        &vocab,
        &samples,
        None,
        &Default::default(),
        DecodeMethod::Greedy,
    )?;
    println!("greedy CER on the overfit set: {:.4}", report.corpus_cer);
    for u in report.utterances.iter().take(4) {
        println!("  {} ref={:?} hyp={:?}", u.utterance_id, u.reference, u.hypothesis);
    }
    Ok(())
}
