//! Joint CTC/attention one-pass beam search with score breakdowns: train
//! a small recognizer for a minute, then decode a few utterances and
//! compare greedy CTC, attention-weighted search, and the exhaustive
//! argmax on a short clip.
//!
//!     cargo run --release --example joint_beam_decode

use lipvsr::ctc::greedy_decode;
use lipvsr::data::{center_crop, generate_dataset, DataConfig};
use lipvsr::decode::{exhaustive_best, joint_decode, DecodeConfig, JointScorer};
use lipvsr::model::{ModelConfig, VsrModel};
use lipvsr::train::{run_curriculum, StageConfig, StageSource, TrainConfig};
use lipvsr::vocab::Vocab;

fn main() -> lipvsr::Result<()> {
    let data_cfg = DataConfig {
        alphabet: "abcde".chars().collect(),
        utterance_count: 120,
        min_tokens: 2,
        max_tokens: 4,
        frames_per_token: 3,
        noise_sigma: 0.3,
        frame_h: 16,
        frame_w: 16,
        ..DataConfig::default()
    };
    let samples = generate_dataset(&data_cfg, 11)?;
    let (train, test) = samples.split_at(110);
    let transcripts: Vec<String> = train.iter().map(|s| s.transcript.clone()).collect();
    let vocab = Vocab::build_from_corpus(&transcripts)?;

    let mut model_cfg = ModelConfig::toy(vocab.size());
    model_cfg.encoder.num_blocks = 4;
    let model = VsrModel::new(model_cfg, 12)?;
    let train_cfg = TrainConfig {
        stages: vec![StageConfig {
            id: 1,
            source: StageSource::Pretrain,
            max_duration_s: None,
            epochs: 14,
            average_from: 12,
            average_to: 14,
        }],
        batch_frames: 160,
        warmup_steps: 80,
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    run_curriculum(&model, train, train, &vocab, &train_cfg, 13, &mut log)?;
    println!("trained {} steps", String::from_utf8_lossy(&log).lines().count());

    let cfg = DecodeConfig {
        ctc_weight: 0.3,
        lm_weight: 0.0,
        beam_size: 8,
        ..DecodeConfig::default()
    };
    for sample in test.iter().take(4) {
        let video = center_crop(&sample.video, 16, 16)?;
        let enc = model.encode(&video)?;
        let ctc_lp = model.ctc_log_probs(&enc.features)?;
        let scorer = JointScorer {
            decoder: &model.left_decoder,
            ctc_log_probs: &ctc_lp,
            memory: &enc.features,
            lm: None,
        };
        let hyps = joint_decode(&scorer, &cfg)?;
        println!("\n{} reference {:?}", sample.utterance_id, sample.transcript);
        println!("  greedy ctc: {:?}", vocab.decode(&greedy_decode(&ctc_lp)?)?);
        for (rank, h) in hyps.iter().take(3).enumerate() {
            let (attn, ctc, _, combined) = h.breakdown();
            println!(
                "  beam #{rank}: {:?} attn={attn:.3} ctc={ctc:.3} combined={combined:.3}",
                vocab.decode(&h.tokens)?
            );
        }
    }

    // On a short clip the search provably finds the argmax: compare with
    // exhaustive enumeration over every sequence up to 3 tokens.
    let short = test
        .iter()
        .find(|s| s.transcript.chars().count() <= 3)
        .expect("short test utterance");
    let video = center_crop(&short.video, 16, 16)?;
    let enc = model.encode(&video)?;
    let ctc_lp = model.ctc_log_probs(&enc.features)?;
    let scorer = JointScorer {
        decoder: &model.left_decoder,
        ctc_log_probs: &ctc_lp,
        memory: &enc.features,
        lm: None,
    };
    let exact_cfg = DecodeConfig {
        beam_size: 512,
        max_len: 3,
        lm_weight: 0.0,
        ..cfg
    };
    let beam = joint_decode(&scorer, &exact_cfg)?;
    let alphabet: Vec<usize> = (3..vocab.size()).collect();
    let oracle = exhaustive_best(&scorer, &exact_cfg, &alphabet, 3)?;
    println!(
        "\nexhaustive check on {}: beam {:?} vs enumeration {:?} (scores {:.6} vs {:.6})",
        short.utterance_id,
        vocab.decode(&beam[0].tokens)?,
        vocab.decode(&oracle.tokens)?,
        beam[0].combined,
        oracle.combined
    );
    Ok(())
}
