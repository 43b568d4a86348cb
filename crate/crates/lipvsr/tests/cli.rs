//! End-to-end runs of the `lipvsr` binary on tiny corpora.

use std::path::{Path, PathBuf};
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lipvsr")
}

fn run(args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.ini");
    std::fs::write(
        &path,
        "seed = 5\n\
         [model]\n\
         d_model = 8\n\
         num_blocks = 2\n\
         attention_heads = 2\n\
         ffn_dim = 16\n\
         conv_kernel = 3\n\
         interctc_interval = 1\n\
         stem_channels = 2\n\
         trunk_channels = 4\n\
         input_height = 8\n\
         input_width = 8\n\
         left_layers = 1\n\
         right_layers = 1\n\
         decoder_heads = 2\n\
         decoder_ffn_dim = 16\n\
         [data]\n\
         alphabet = abcd\n\
         utterances = 40\n\
         min_tokens = 1\n\
         max_tokens = 3\n\
         frame_height = 8\n\
         frame_width = 8\n\
         split_train = 0.8\n\
         split_valid = 0.1\n\
         split_test = 0.1\n\
         [curriculum]\n\
         stages = 1\n\
         stage1_epochs = 3\n\
         stage1_average_from = 2\n\
         stage1_average_to = 3\n\
         warmup_steps = 10\n\
         lm_epochs = 2\n\
         lm_hidden = 8\n\
         lm_embed = 6\n\
         [decode]\n\
         beam_size = 40\n\
         ctc_weight = 0.3\n\
         lm_weight = 0.1\n",
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_synth_train_decode_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let corpus = dir.path().join("corpus");
    let summary = run_ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
    ]);
    assert!(summary.starts_with("SYNTH_UTTS=40"), "{summary}");
    assert!(corpus.join("train.tsv").exists());
    assert!(corpus.join("videos").is_dir());

    let run_dir = dir.path().join("run");
    let summary = run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(summary.starts_with("TRAIN_FINAL_LOSS="), "{summary}");
    assert!(run_dir.join("model.lckp").exists());
    assert!(run_dir.join("lm.lckp").exists());
    assert!(run_dir.join("training.log").exists());
    assert!(run_dir.join("stage1_avg.lckp").exists());

    // Paper-style decode configuration (beam 40, ctc 0.3, lm 0.1) is
    // accepted as-is; the tiny config above pins exactly those values.
    let hyp = dir.path().join("test.hyp");
    let summary = run_ok(&[
        "decode",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.lckp").to_str().unwrap(),
        "--manifest",
        corpus.join("test.tsv").to_str().unwrap(),
        "--out",
        hyp.to_str().unwrap(),
    ]);
    assert_eq!(summary.trim(), "DECODED=4");
    let hyp_text = std::fs::read_to_string(&hyp).unwrap();
    for line in hyp_text.lines() {
        assert_eq!(line.split('\t').count(), 6, "bad record {line:?}");
    }

    let summary = run_ok(&[
        "eval",
        "--ref",
        corpus.join("test.tsv").to_str().unwrap(),
        "--hyp",
        hyp.to_str().unwrap(),
    ]);
    assert!(summary.starts_with("CER="), "{summary}");
    let cer: f64 = summary.trim().strip_prefix("CER=").unwrap().parse().unwrap();
    assert!((0.0..=2.0).contains(&cer));

    //

    // Evaluating the references against themselves is exactly zero.
    let self_hyp = dir.path().join("self.hyp");
    let refs = std::fs::read_to_string(corpus.join("test.tsv")).unwrap();
    let mut text = String::new();
    for line in refs.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        text.push_str(&format!("{}\t{}\n", f[0], f[3]));
    }
    std::fs::write(&self_hyp, text).unwrap();
    let summary = run_ok(&[
        "eval",
        "--ref",
        corpus.join("test.tsv").to_str().unwrap(),
        "--hyp",
        self_hyp.to_str().unwrap(),
    ]);
    assert_eq!(summary.trim(), "CER=0.0000");
}

#[test]
fn synth_is_deterministic_and_respects_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run_ok(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        std::fs::read(a.join("train.tsv")).unwrap(),
        std::fs::read(b.join("train.tsv")).unwrap()
    );
    let video = std::fs::read_dir(a.join("videos")).unwrap().next().unwrap().unwrap();
    assert_eq!(
        std::fs::read(video.path()).unwrap(),
        std::fs::read(b.join("videos").join(video.file_name())).unwrap()
    );
    // Existing non-empty output without --force is refused.
    let refused = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(!refused.status.success());
    run_ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--force",
    ]);
}

#[test]
fn seed_flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    run_ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_ne!(
        std::fs::read(a.join("train.tsv")).unwrap(),
        std::fs::read(b.join("train.tsv")).unwrap()
    );
    let resolved = std::fs::read_to_string(b.join("resolved.ini")).unwrap();
    assert!(resolved.starts_with("seed = 99"), "{resolved}");
}

#[test]
fn unknown_config_keys_are_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "[model]\nwidth = 9\n").unwrap();
    let out = run(&[
        "synth",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown configuration key"), "{err}");
}

#[test]
fn decode_jobs_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let corpus = dir.path().join("corpus");
    run_ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
    ]);
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let hyp = dir.path().join(format!("hyp_{jobs}.tsv"));
        run_ok(&[
            "decode",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            run_dir.join("model.lckp").to_str().unwrap(),
            "--manifest",
            corpus.join("valid.tsv").to_str().unwrap(),
            "--out",
            hyp.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        outputs.push(std::fs::read(&hyp).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn gradcheck_command_reports_tight_error() {
    let out = run_ok(&["gradcheck"]);
    let value: f64 = out
        .trim()
        .strip_prefix("GRADCHECK_MAX_REL_ERR=")
        .expect("summary prefix")
        .parse()
        .unwrap();
    assert!(value <= 1e-4, "{out}");
}

#[test]
fn checkpoint_restore_rejects_mismatched_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let corpus = dir.path().join("corpus");
    run_ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
    ]);
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    // Decode with a config whose model shape does not match the
    // checkpoint: must fail loudly rather than misload.
    let wide = dir.path().join("wide.ini");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("d_model = 8", "d_model = 16");
    std::fs::write(&wide, text).unwrap();
    let out = run(&[
        "decode",
        "--config",
        wide.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.lckp").to_str().unwrap(),
        "--manifest",
        corpus.join("test.tsv").to_str().unwrap(),
        "--out",
        dir.path().join("h.tsv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
