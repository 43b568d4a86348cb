// Scratch: timing and convergence probe for the toy pipeline.
// (deleted before shipping; not part of the examples set)

use std::time::Instant;

use lipvsr::cli::RunConfig;
use lipvsr::data::generate_dataset;
use lipvsr::lm::{train_lm, RnnLm};
use lipvsr::model::VsrModel;
use lipvsr::rng::{salts, SplitRng};
use lipvsr::train::{evaluate, run_curriculum, DecodeMethod};
use lipvsr::vocab::Vocab;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let utts: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.utterances = utts + 60;
    if epochs > 0 {
        cfg.stage_epochs = [epochs, epochs, epochs.div_ceil(2)];
        cfg.stage_average_from =
            [epochs.div_ceil(2), epochs.div_ceil(2), epochs.div_ceil(4).max(1)];
        cfg.stage_average_to = [epochs, epochs, epochs.div_ceil(2)];
    }

    let t0 = Instant::now();
    let samples = generate_dataset(&cfg.data_config(), cfg.seed).unwrap();
    let (train, rest) = samples.split_at(utts);
    let (_valid, test) = rest.split_at(30);
    println!("synth: {:?} ({} utts)", t0.elapsed(), samples.len());

    let transcripts: Vec<String> = train.iter().map(|s| s.transcript.clone()).collect();
    let vocab = Vocab::build_from_corpus(&transcripts).unwrap();
    let model = VsrModel::new(cfg.model_config(vocab.size()), cfg.seed).unwrap();
    let n_params: usize = model.params().iter().map(|(_, p)| p.numel()).sum();
    println!("model params: {n_params}");

    let t1 = Instant::now();
    let train_cfg = cfg.train_config().unwrap();
    let mut log = Vec::new();
    let out = run_curriculum(&model, train, train, &vocab, &train_cfg, cfg.seed, &mut log).unwrap();
    let log_text = String::from_utf8(log).unwrap();
    let first = log_text.lines().next().unwrap_or("");
    let last = log_text.lines().last().unwrap_or("");
    println!("train: {:?} ({} steps)", t1.elapsed(), out.steps);
    println!("  first: {first}");
    println!("  last:  {last}");

    let t2 = Instant::now();
    let mut lm_rng = SplitRng::new(cfg.seed).derive(salts::LM_INIT, 0);
    let lm = RnnLm::new(cfg.lm_config(), vocab.size(), &mut lm_rng);
    let ppl = train_lm(&lm, &vocab, &transcripts, cfg.lm_epochs, cfg.lm_lr, cfg.seed).unwrap();
    println!("lm train: {:?} ppl={:?}", t2.elapsed(), ppl.last());

    let t3 = Instant::now();
    let greedy = evaluate(&model, &vocab, test, None, &cfg.decode_config(), DecodeMethod::Greedy)
        .unwrap();
    println!("greedy eval: {:?} CER={:.4}", t3.elapsed(), greedy.corpus_cer);

    let t4 = Instant::now();
    let joint = evaluate(
        &model,
        &vocab,
        test,
        Some(&lm),
        &cfg.decode_config(),
        DecodeMethod::Joint,
    )
    .unwrap();
    println!("joint eval: {:?} CER={:.4}", t4.elapsed(), joint.corpus_cer);
    for u in joint.utterances.iter().take(5) {
        println!("  {} ref={:?} hyp={:?}", u.utterance_id, u.reference, u.hypothesis);
    }
    println!("total: {:?}", t0.elapsed());
}
