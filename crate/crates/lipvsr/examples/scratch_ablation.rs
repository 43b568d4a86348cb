// Scratch: ablation direction probe (deleted before shipping).
// (a) pure-CTC training, K=2 vs K=0, greedy CTC eval.
// (b) full model, joint decode with lm 0.1 vs lm 0.

use std::time::Instant;

use lipvsr::cli::RunConfig;
use lipvsr::data::generate_dataset;
use lipvsr::lm::{train_lm, RnnLm};
use lipvsr::model::VsrModel;
use lipvsr::rng::{salts, SplitRng};
use lipvsr::train::{evaluate, run_curriculum, DecodeMethod};
use lipvsr::vocab::Vocab;

fn ablation_config(seed: u64, interctc_interval: usize, sigma: f64, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.alphabet = "abcdefgh".into();
    cfg.ambiguous_pairs = vec![('a', 'b')];
    cfg.noise_sigma = sigma;
    cfg.utterances = 650;
    cfg.min_tokens = 3;
    cfg.max_tokens = 6;
    cfg.batch_frames = 160;
    cfg.d_model = 16;
    cfg.attention_heads = 2;
    cfg.ffn_dim = 64;
    cfg.num_blocks = 6;
    cfg.interctc_interval = interctc_interval;
    cfg.decoder_ffn_dim = 64;
    cfg.stages = 1;
    cfg.stage_epochs = [epochs, 0, 0];
    cfg.stage_average_from = [(epochs - 1).max(1), 0, 0];
    cfg.stage_average_to = [epochs, 0, 0];
    cfg.warmup_steps = 100;
    cfg.lm_epochs = 12;
    cfg
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let sigma: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let seeds: Vec<u64> = args
        .get(3)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![11, 12, 13]);

    let (mut sk, mut sk0, mut slm, mut snolm) = (0.0, 0.0, 0.0, 0.0);
    for &seed in &seeds {
        let t0 = Instant::now();
        // (a): pure-CTC models, greedy decoding.
        let mut cer_greedy = Vec::new();
        for interval in [2usize, 99] {
            let mut cfg = ablation_config(seed, interval, sigma, epochs);
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
            cer_greedy.push(rep.corpus_cer);
        }
        println!(
            "seed {seed} (a): K2 {:.4} vs K0 {:.4} ({:?})",
            cer_greedy[0],
            cer_greedy[1],
            t0.elapsed()
        );
        sk += cer_greedy[0];
        sk0 += cer_greedy[1];

        // (b): full default model, joint decode with and without LM.
        let t1 = Instant::now();
        let cfg = ablation_config(seed, 2, sigma, epochs);
        let samples = generate_dataset(&cfg.data_config(), cfg.seed).unwrap();
        let (train, test) = samples.split_at(500);
        let transcripts: Vec<String> = train.iter().map(|s| s.transcript.clone()).collect();
        let vocab = Vocab::build_from_corpus(&transcripts).unwrap();
        let model = VsrModel::new(cfg.model_config(vocab.size()), cfg.seed).unwrap();
        let train_cfg = cfg.train_config().unwrap();
        let mut log = Vec::new();
        run_curriculum(&model, train, train, &vocab, &train_cfg, cfg.seed, &mut log).unwrap();
        let no_lm = {
            let mut d = cfg.decode_config();
            d.lm_weight = 0.0;
            evaluate(&model, &vocab, test, None, &d, DecodeMethod::Joint).unwrap()
        };
        let mut pair = 0usize;
        let mut other = 0usize;
        let mut ins_del = 0usize;
        for u in &no_lm.utterances {
            for step in lipvsr::data::edit_alignment(&u.reference, &u.hypothesis) {
                match step {
                    lipvsr::data::AlignStep::Substitute(r, h) => {
                        if (r == 'a' && h == 'b') || (r == 'b' && h == 'a') {
                            pair += 1;
                        } else {
                            other += 1;
                        }
                    }
                    lipvsr::data::AlignStep::Match(_) => {}
                    _ => ins_del += 1,
                }
            }
        }
        let mut lm_rng = SplitRng::new(cfg.seed).derive(salts::LM_INIT, 0);
        let lm = RnnLm::new(cfg.lm_config(), vocab.size(), &mut lm_rng);
        let ppl = train_lm(&lm, &vocab, &transcripts, cfg.lm_epochs, cfg.lm_lr, cfg.seed).unwrap();
        let with_lm = evaluate(&model, &vocab, test, Some(&lm), &cfg.decode_config(), DecodeMethod::Joint)
            .unwrap();
        println!(
            "seed {seed} (b): no-lm {:.4} -> lm {:.4} (ppl {:.2}; errors pair={pair} other={other} insdel={ins_del}) ({:?})",
            no_lm.corpus_cer,
            with_lm.corpus_cer,
            ppl.last().unwrap(),
            t1.elapsed()
        );
        snolm += no_lm.corpus_cer;
        slm += with_lm.corpus_cer;
    }
    let n = seeds.len() as f64;
    println!(
        "MEAN: (a) K2 {:.4} vs K0 {:.4} | (b) no-lm {:.4} vs lm {:.4}",
        sk / n,
        sk0 / n,
        snolm / n,
        slm / n
    );
}
