//! Synthesize a rendered-token video corpus and poke at its properties:
//! glyph geometry, ambiguous pairs, bigram transcript structure, and the
//! on-disk manifest/LVID formats.
//!
//!     cargo run --release --example synthesize_corpus [OUT_DIR]

use lipvsr::data::{generate_dataset, glyph, write_dataset, DataConfig, TranscriptLanguage};
use lipvsr::vocab::Vocab;

fn main() -> lipvsr::Result<()> {
    let cfg = DataConfig {
        alphabet: "abcdefgh".chars().collect(),
        utterance_count: 60,
        min_tokens: 3,
        max_tokens: 6,
        frames_per_token: 3,
        noise_sigma: 0.5,
        ambiguous_pairs: vec![('a', 'b')],
        frame_h: 16,
        frame_w: 16,
        ..DataConfig::default()
    };
    let seed = 7;

    let ga = glyph('a', 16, 16, &cfg.ambiguous_pairs);
    let gb = glyph('b', 16, 16, &cfg.ambiguous_pairs);
    let gc = glyph('c', 16, 16, &cfg.ambiguous_pairs);
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).filter(|(p, q)| p != q).count();
    println!(
        "glyphs: a-vs-b differ in {} of 256 pixels (ambiguous pair), a-vs-c in {}",
        diff(&ga, &gb),
        diff(&ga, &gc)
    );

    let lang = TranscriptLanguage::build(&cfg, seed);
    println!("transcript language start set: {:?}", lang.start);
    for (c, succ) in lang.successors.iter().take(4) {
        println!("  successors of {c}: {succ:?}");
    }

    let samples = generate_dataset(&cfg, seed)?;
    let frames: usize = samples.iter().map(|s| s.video.t).sum();
    println!(
        "generated {} utterances, {frames} frames, durations {:.2}-{:.2} s",
        samples.len(),
        samples.iter().map(|s| s.duration_s).fold(f64::MAX, f64::min),
        samples.iter().map(|s| s.duration_s).fold(0.0, f64::max),
    );
    for s in samples.iter().take(5) {
        println!("  {}: {:?} ({} frames)", s.utterance_id, s.transcript, s.video.t);
    }

    let transcripts: Vec<String> = samples.iter().map(|s| s.transcript.clone()).collect();
    let vocab = Vocab::build_from_corpus(&transcripts)?;
    println!("vocabulary size {} (3 specials + characters)", vocab.size());

    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lipvsr_corpus_demo"));
    std::fs::create_dir_all(&out)?;
    write_dataset(&out, "train.tsv", &samples)?;
    vocab.save(&out.join("vocab.txt"))?;
    println!("wrote corpus under {}", out.display());
    Ok(())
}
