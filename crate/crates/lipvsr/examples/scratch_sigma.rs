// Scratch: find the noise level where the ambiguous pair becomes
// visually confusable for a pure-CTC model (deleted before shipping).

use lipvsr::cli::RunConfig;
use lipvsr::data::{edit_alignment, generate_dataset, AlignStep};
use lipvsr::model::VsrModel;
use lipvsr::train::{evaluate, run_curriculum, DecodeMethod};
use lipvsr::vocab::Vocab;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let sigmas: Vec<f64> = args
        .get(2)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![1.2, 1.6, 2.0]);
    let seed = 11;
    for sigma in sigmas {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.alphabet = "abcdefgh".into();
        cfg.ambiguous_pairs = vec![('a', 'b')];
        cfg.noise_sigma = sigma;
        cfg.utterances = 650;
        cfg.min_tokens = 3;
        cfg.max_tokens = 6;
        cfg.batch_frames = 160;
        cfg.frame_height = 8;
        cfg.frame_width = 8;
        cfg.input_height = 8;
        cfg.input_width = 8;
        cfg.trunk_channels = vec![8, 16];
        cfg.d_model = 16;
        cfg.attention_heads = 2;
        cfg.ffn_dim = 64;
        cfg.num_blocks = 6;
        cfg.interctc_interval = 2;
        cfg.decoder_ffn_dim = 64;
        cfg.stages = 1;
        cfg.stage_epochs = [epochs, 0, 0];
        cfg.stage_average_from = [(epochs - 1).max(1), 0, 0];
        cfg.stage_average_to = [epochs, 0, 0];
        cfg.warmup_steps = 100;
        cfg.lambda = 1.0;
        let samples = generate_dataset(&cfg.data_config(), cfg.seed).unwrap();
        let (train, test) = samples.split_at(500);
        let transcripts: Vec<String> = train.iter().map(|s| s.transcript.clone()).collect();
        let vocab = Vocab::build_from_corpus(&transcripts).unwrap();
        let model = VsrModel::new(cfg.model_config(vocab.size()), cfg.seed).unwrap();
        let train_cfg = cfg.train_config().unwrap();
        let mut log = Vec::new();
        run_curriculum(&model, train, train, &vocab, &train_cfg, cfg.seed, &mut log).unwrap();
        let rep = evaluate(&model, &vocab, test, None, &cfg.decode_config(), DecodeMethod::Greedy)
            .unwrap();
        let (mut pair, mut other, mut insdel) = (0, 0, 0);
        for u in &rep.utterances {
            for step in edit_alignment(&u.reference, &u.hypothesis) {
                match step {
                    AlignStep::Substitute(r, h) => {
                        if (r == 'a' && h == 'b') || (r == 'b' && h == 'a') {
                            pair += 1;
                        } else {
                            other += 1;
                        }
                    }
                    AlignStep::Match(_) => {}
                    _ => insdel += 1,
                }
            }
        }
        println!(
            "sigma {sigma}: greedy CER {:.4} (pair={pair} other={other} insdel={insdel})",
            rep.corpus_cer
        );
    }
}
