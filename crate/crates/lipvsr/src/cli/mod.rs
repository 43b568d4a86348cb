//! Command implementations behind the `lipvsr` binary: `synth`, `train`,
//! `decode`, `eval`, `gradcheck`. Each command finishes with one
//! machine-readable summary line on stdout (`CER=0.0312`,
//! `GRADCHECK_MAX_REL_ERR=3.1e-6`, ...) and writes its fully resolved
//! configuration alongside its outputs so any run can be reproduced from
//! (resolved config, seed).

mod config;

pub use config::RunConfig;

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{self, read_manifest, SyntheticSample};
use crate::error::{Error, Result};
use crate::lm::{train_lm, RnnLm};
use crate::model::VsrModel;
use crate::rng::{salts, SplitRng};
use crate::tensor::finite_difference_check;
use crate::train::{run_curriculum, Checkpoint, CheckpointMeta, DecodeMethod, UtteranceResult};
use crate::vocab::Vocab;

/// Generates the corpus, splits it, and writes videos, manifests, the
/// vocabulary, and the resolved config under `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    if out.exists() && out.read_dir()?.next().is_some() {
        if !force {
            return Err(Error::config(format!(
                "output directory {} exists and is not empty (use --force to overwrite)",
                out.display()
            )));
        }
        std::fs::remove_dir_all(out)?;
    }
    std::fs::create_dir_all(out)?;
    let samples = data::generate_dataset(&cfg.data_config(), cfg.seed)?;
    let (n_train, n_valid, n_test) = cfg.split_counts()?;
    let train = &samples[..n_train];
    let valid = &samples[n_train..n_train + n_valid];
    let test = &samples[n_train + n_valid..];
    data::write_dataset(out, "train.tsv", train)?;
    data::write_dataset(out, "valid.tsv", valid)?;
    data::write_dataset(out, "test.tsv", test)?;
    let transcripts: Vec<String> = train.iter().map(|s| s.transcript.clone()).collect();
    let vocab = Vocab::build_from_corpus(&transcripts)?;
    vocab.save(&out.join("vocab.txt"))?;
    std::fs::write(out.join("resolved.ini"), cfg.dump())?;
    Ok(format!(
        "SYNTH_UTTS={} train={n_train} valid={n_valid} test={n_test}",
        samples.len()
    ))
}

/// Runs the curriculum plus language-model training on a synthesized
/// corpus directory; writes per-epoch and averaged checkpoints, the final
/// model, the language model, and the step-by-step training log.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out)?;
    let vocab = Vocab::load(&data_dir.join("vocab.txt"))?;
    let train_set = data::load_dataset(data_dir, "train.tsv")?;
    let model = VsrModel::new(cfg.model_config(vocab.size()), cfg.seed)?;
    let train_cfg = cfg.train_config()?;

    let mut log = Vec::new();
    let outcome = run_curriculum(
        &model,
        &train_set,
        &train_set,
        &vocab,
        &train_cfg,
        cfg.seed,
        &mut log,
    )?;
    std::fs::write(out.join("training.log"), &log)?;

    let digest = cfg.digest();
    for (si, stage) in outcome.stage_checkpoints.iter().enumerate() {
        for ck in stage {
            let mut stamped = ck.clone();
            stamped.meta.config_digest = digest;
            stamped.save(&out.join(format!(
                "stage{}_epoch{}.lckp",
                si + 1,
                ck.meta.epoch
            )))?;
        }
    }
    for (si, avg) in outcome.stage_averages.iter().enumerate() {
        let mut stamped = avg.clone();
        stamped.meta.config_digest = digest;
        stamped.save(&out.join(format!("stage{}_avg.lckp", si + 1)))?;
    }
    let mut final_ck = outcome.final_checkpoint.clone();
    final_ck.meta.config_digest = digest;
    final_ck.save(&out.join("model.lckp"))?;

    // Language model on the training transcripts.
    let mut lm_rng = SplitRng::new(cfg.seed).derive(salts::LM_INIT, 0);
    let lm = RnnLm::new(cfg.lm_config(), vocab.size(), &mut lm_rng);
    let transcripts: Vec<String> = train_set.iter().map(|s| s.transcript.clone()).collect();
    let ppl = train_lm(&lm, &vocab, &transcripts, cfg.lm_epochs, cfg.lm_lr, cfg.seed)?;
    Checkpoint::capture(
        &lm.params(),
        CheckpointMeta {
            stage: 0,
            epoch: cfg.lm_epochs as u32,
            seed: cfg.seed,
            config_digest: digest,
            note: "language model".into(),
        },
    )
    .save(&out.join("lm.lckp"))?;

    std::fs::write(out.join("resolved.ini"), cfg.dump())?;
    let last_total = String::from_utf8_lossy(&log)
        .lines()
        .last()
        .and_then(|l| l.rsplit("total=").next().map(str::to_string))
        .unwrap_or_default();
    Ok(format!(
        "TRAIN_FINAL_LOSS={last_total} steps={} lm_ppl={:.4}",
        outcome.steps,
        ppl.last().copied().unwrap_or(f64::NAN)
    ))
}


fn decode_range(
    cfg: &RunConfig,
    vocab: &Vocab,
    checkpoint: &Checkpoint,
    lm_checkpoint: Option<&Checkpoint>,
    samples: &[SyntheticSample],
    greedy: bool,
) -> Result<Vec<UtteranceResult>> {
    let model = VsrModel::new(cfg.model_config(vocab.size()), cfg.seed)?;
    checkpoint.restore(&model.params())?;
    let lm = match lm_checkpoint {
        Some(ck) => {
            let mut rng = SplitRng::new(cfg.seed).derive(salts::LM_INIT, 0);
            let lm = RnnLm::new(cfg.lm_config(), vocab.size(), &mut rng);
            ck.restore(&lm.params())?;
            Some(lm)
        }
        None => None,
    };
    let method = if greedy {
        DecodeMethod::Greedy
    } else {
        DecodeMethod::Joint
    };
    let decode_cfg = cfg.decode_config();
    samples
        .iter()
        .map(|s| crate::train::decode_utterance(&model, vocab, s, lm.as_ref(), &decode_cfg, method))
        .collect()
}

/// Decodes a manifest with a trained checkpoint; writes one record per
/// utterance: `id<TAB>hypothesis<TAB>attn<TAB>ctc<TAB>lm<TAB>combined`.
/// Utterance-level parallelism via `jobs`; output order and content are
/// independent of the job count.
#[allow(clippy::too_many_arguments)]
pub fn cmd_decode(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    manifest_path: &Path,
    out_file: &Path,
    lm_path: Option<&Path>,
    jobs: usize,
    greedy: bool,
) -> Result<String> {
    let jobs = jobs.max(1);
    let dir = manifest_path
        .parent()
        .ok_or_else(|| Error::config("manifest path has no parent directory"))?;
    let manifest_name = manifest_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::config("bad manifest path"))?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let samples = data::load_dataset(dir, manifest_name)?;
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let lm_checkpoint = match lm_path {
        Some(p) => Some(Checkpoint::load(p)?),
        None if cfg.lm_weight > 0.0 && !greedy => {
            let sibling = checkpoint_path.with_file_name("lm.lckp");
            if sibling.exists() {
                Some(Checkpoint::load(&sibling)?)
            } else {
                return Err(Error::config(
                    "lm_weight > 0 but no language model checkpoint found (pass --lm)",
                ));
            }
        }
        None => None,
    };

    let results: Vec<UtteranceResult> = if jobs == 1 || samples.len() < 2 {
        decode_range(cfg, &vocab, &checkpoint, lm_checkpoint.as_ref(), &samples, greedy)?
    } else {
        let chunk = samples.len().div_ceil(jobs);
        let chunks: Vec<&[SyntheticSample]> = samples.chunks(chunk).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for part in &chunks {
                let vocab = &vocab;
                let checkpoint = &checkpoint;
                let lm_checkpoint = lm_checkpoint.as_ref();
                handles.push(scope.spawn(move || {
                    decode_range(cfg, vocab, checkpoint, lm_checkpoint, part, greedy)
                }));
            }
            let mut out = Vec::with_capacity(samples.len());
            for h in handles {
                out.extend(h.join().expect("decode worker panicked")?);
            }
            Ok::<_, Error>(out)
        })?
    };

    let mut text = String::new();
    for r in &results {
        let _ = writeln!(
            text,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.utterance_id, r.hypothesis, r.attn_score, r.ctc_score, r.lm_score, r.combined
        );
    }
    std::fs::write(out_file, text)?;
    Ok(format!("DECODED={}", results.len()))
}

/// Scores a hypothesis file against a reference manifest; prints corpus
/// CER aggregated as summed edit distance over summed reference length.
pub fn cmd_eval(ref_manifest: &Path, hyp_file: &Path) -> Result<String> {
    let refs = read_manifest(ref_manifest)?;
    let hyp_text = std::fs::read_to_string(hyp_file)?;
    let mut hyps = std::collections::HashMap::new();
    for (ln, line) in hyp_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(Error::format(format!(
                "hypothesis line {} has {} fields, expected at least 2",
                ln + 1,
                fields.len()
            )));
        }
        hyps.insert(fields[0].to_string(), fields[1].to_string());
    }
    let mut pairs = Vec::with_capacity(refs.len());
    for r in &refs {
        let hyp = hyps.get(&r.utterance_id).ok_or_else(|| {
            Error::format(format!("no hypothesis for utterance {}", r.utterance_id))
        })?;
        pairs.push((r.transcript.as_str(), hyp.as_str()));
    }
    let cer = data::corpus_cer(pairs.iter().copied())?;
    Ok(format!("CER={cer:.4}"))
}

/// Builds the reference micro model (8-dim, 2 encoder blocks, one
/// intermediate module, 1+1 decoder layers, 6 tokens, 5 frames) and
/// finite-difference-checks the full training objective with respect to
/// every parameter.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<String> {
    let model_cfg = crate::model::ModelConfig::micro(6);
    let model = VsrModel::new(model_cfg, cfg.seed)?;
    let mut rng = SplitRng::new(cfg.seed).derive(salts::UTTERANCE, 0);
    let video = crate::data::Video::new(
        (0..5 * 8 * 8).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        5,
        8,
        8,
        25.0,
    )?;
    let target = vec![3usize, 4];
    let hp = cfg.hyper_params();
    let tensors: Vec<crate::tensor::Tensor> =
        model.params().into_iter().map(|(_, t)| t).collect();
    let model_ref = &model;
    let video_ref = &video;
    let target_ref = &target;
    let mut f = move || {
        let (b, _) = model_ref.forward_losses(video_ref, target_ref, &hp)?;
        Ok(b.total)
    };
    let err = finite_difference_check(&mut f, &tensors, 1e-5)?;
    Ok(format!("GRADCHECK_MAX_REL_ERR={err:.3e}"))
}
