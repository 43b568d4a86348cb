//! Synthetic "rendered token video" corpus.
//!
//! Each transcript character is drawn as a fixed pseudo-random binary
//! glyph held for a fixed number of frames, plus Gaussian pixel noise.
//! Characters configured as an *ambiguous pair* share near-identical
//! glyphs, so a purely visual model confuses them and only language
//! context can disambiguate — the property that makes language-model
//! fusion measurable on this corpus. Transcripts are sampled from a
//! seeded bigram language whose transitions keep ambiguous partners in
//! disjoint contexts.

mod augment;
mod glyphs;
mod manifest;
mod metrics;
mod video;

pub use augment::{augment_random_crop, augment_time_mask, center_crop, AugmentConfig};
pub use glyphs::glyph;
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use metrics::{cer, corpus_cer, edit_alignment, edit_distance, AlignStep};
pub use video::{read_video, write_video, Video};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{salts, SplitRng};

/// One synthetic utterance.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub video: Video,
    pub transcript: String,
    pub utterance_id: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub alphabet: Vec<char>,
    pub utterance_count: usize,
    /// Transcript length range in tokens, inclusive.
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Frames each character stays on screen.
    pub frames_per_token: usize,
    pub noise_sigma: f64,
    /// Pairs of characters rendered with near-identical glyphs.
    pub ambiguous_pairs: Vec<(char, char)>,
    pub frame_h: usize,
    pub frame_w: usize,
    pub frame_rate: f64,
    /// Successors per character in the transcript bigram language.
    pub branching: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            alphabet: "abcdefghijkl".chars().collect(),
            utterance_count: 200,
            min_tokens: 2,
            max_tokens: 8,
            frames_per_token: 3,
            noise_sigma: 0.3,
            ambiguous_pairs: Vec::new(),
            frame_h: 16,
            frame_w: 16,
            frame_rate: 25.0,
            branching: 3,
        }
    }
}

impl DataConfig {
    fn validate(&self) -> Result<()> {
        if self.alphabet.is_empty() {
            return Err(Error::config("empty alphabet"));
        }
        if self.frames_per_token < 2 {
            return Err(Error::config("frames_per_token must be at least 2"));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::config("bad transcript length range"));
        }
        if self.branching == 0 {
            return Err(Error::config("branching must be at least 1"));
        }
        for (a, b) in &self.ambiguous_pairs {
            if !self.alphabet.contains(a) || !self.alphabet.contains(b) {
                return Err(Error::config(format!(
                    "ambiguous pair ({a}, {b}) uses characters outside the alphabet"
                )));
            }
            if a == b {
                return Err(Error::config("ambiguous pair of a character with itself"));
            }
        }
        Ok(())
    }
}

/// Bigram transcript language: an allowed-successor table per character
/// plus a start set. For every ambiguous pair the two members never share
/// a predecessor, so the preceding character always determines which
/// member can appear.
#[derive(Debug, Clone)]
pub struct TranscriptLanguage {
    pub start: Vec<char>,
    pub successors: BTreeMap<char, Vec<char>>,
}

impl TranscriptLanguage {
    pub fn build(cfg: &DataConfig, seed: u64) -> TranscriptLanguage {
        let mut rng = SplitRng::new(seed).derive(salts::LANGUAGE, 0);
        let a = &cfg.alphabet;
        // No character succeeds itself: tokens never repeat back to back,
        // which gives the language model a clean signal against the
        // repeat-insertion errors frame-level decoding tends to make.
        let pick = |rng: &mut SplitRng, n: usize, exclude: Option<char>| -> Vec<char> {
            let mut pool: Vec<char> = a
                .iter()
                .copied()
                .filter(|&c| Some(c) != exclude)
                .collect();
            rng.shuffle(&mut pool);
            pool.truncate(n.min(pool.len()));
            pool.sort_unstable();
            pool
        };
        let start_n = cfg.branching.max(4).min(a.len());
        let mut start = pick(&mut rng, start_n, None);
        let mut successors: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for &c in a {
            successors.insert(c, pick(&mut rng, cfg.branching, Some(c)));
        }
        // Disjoint contexts for ambiguous partners: in any successor set
        // that contains both, or contains the "wrong" member for that
        // context's parity, keep exactly one, deterministically.
        for &(x, y) in &cfg.ambiguous_pairs {
            let fix = |set: &mut Vec<char>, key: u64| {
                let keep_x = key % 2 == 0;
                let had = set.contains(&x) || set.contains(&y);
                set.retain(|&c| c != x && c != y);
                if had {
                    set.push(if keep_x { x } else { y });
                    set.sort_unstable();
                }
            };
            fix(&mut start, 0);
            for (ctx, set) in successors.iter_mut() {
                fix(set, *ctx as u64);
            }
        }
        // Every character must be reachable; inject missing ones into a
        // deterministic context (respecting pair disjointness).
        let lang = TranscriptLanguage { start, successors };
        lang.ensure_coverage(cfg)
    }

    fn ensure_coverage(mut self, cfg: &DataConfig) -> TranscriptLanguage {
        let partner = |c: char| -> Option<char> {
            cfg.ambiguous_pairs.iter().find_map(|&(x, y)| {
                if x == c {
                    Some(y)
                } else if y == c {
                    Some(x)
                } else {
                    None
                }
            })
        };
        for &c in &cfg.alphabet {
            let reachable = self.start.contains(&c)
                || self.successors.values().any(|s| s.contains(&c));
            if reachable {
                continue;
            }
            let p = partner(c);
            // First foreign context whose set excludes the partner takes it.
            for (&ctx, set) in self.successors.iter_mut() {
                if ctx != c && p.is_none_or(|pc| !set.contains(&pc)) {
                    set.push(c);
                    set.sort_unstable();
                    break;
                }
            }
        }
        self
    }

    pub fn sample(&self, len: usize, rng: &mut SplitRng) -> String {
        let mut out = String::with_capacity(len);
        let mut prev: Option<char> = None;
        for _ in 0..len {
            let pool = match prev {
                None => &self.start,
                Some(p) => &self.successors[&p],
            };
            let c = pool[rng.below(pool.len())];
            out.push(c);
            prev = Some(c);
        }
        out
    }
}

/// Renders one transcript into a video: each character's glyph held for
/// `frames_per_token` frames with fresh per-frame noise, clamped to [-1, 1].
pub fn render_transcript(
    transcript: &str,
    cfg: &DataConfig,
    rng: &mut SplitRng,
) -> Result<Video> {
    let d = cfg.frames_per_token;
    let (h, w) = (cfg.frame_h, cfg.frame_w);
    let t = d * transcript.chars().count();
    let mut frames = Vec::with_capacity(t * h * w);
    for c in transcript.chars() {
        if !cfg.alphabet.contains(&c) {
            return Err(Error::config(format!(
                "character {c:?} has no glyph in this configuration"
            )));
        }
        let g = glyph(c, h, w, &cfg.ambiguous_pairs);
        for _ in 0..d {
            for &base in &g {
                let v = if cfg.noise_sigma > 0.0 {
                    (base + rng.normal(0.0, cfg.noise_sigma)).clamp(-1.0, 1.0)
                } else {
                    base
                };
                frames.push(v);
            }
        }
    }
    Video::new(frames, t, h, w, cfg.frame_rate)
}

/// Generates the full corpus. Each utterance derives its own stream from
/// (seed, index), so generation order — or parallelism — cannot change
/// the result.
pub fn generate_dataset(cfg: &DataConfig, seed: u64) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let root = SplitRng::new(seed);
    let lang = TranscriptLanguage::build(cfg, seed);
    let mut samples = Vec::with_capacity(cfg.utterance_count);
    for idx in 0..cfg.utterance_count {
        let mut rng = root.derive(salts::UTTERANCE, idx as u64);
        let len = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
        let transcript = lang.sample(len, &mut rng);
        let video = render_transcript(&transcript, cfg, &mut rng)?;
        let duration_s = video.t as f64 / video.frame_rate;
        samples.push(SyntheticSample {
            video,
            transcript,
            utterance_id: format!("utt{idx:06}"),
            duration_s,
        });
    }
    Ok(samples)
}

/// Writes videos plus a manifest under `dir`; returns the manifest.
pub fn write_dataset(
    dir: &Path,
    manifest_name: &str,
    samples: &[SyntheticSample],
) -> Result<Vec<ManifestEntry>> {
    let videos = dir.join("videos");
    std::fs::create_dir_all(&videos)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("videos/{}.lvid", s.utterance_id);
        write_video(&dir.join(&rel), &s.video)?;
        entries.push(ManifestEntry {
            utterance_id: s.utterance_id.clone(),
            path: rel,
            duration_s: s.duration_s,
            transcript: s.transcript.clone(),
        });
    }
    write_manifest(&dir.join(manifest_name), &entries)?;
    Ok(entries)
}

/// Loads a manifest and its videos back into memory.
pub fn load_dataset(dir: &Path, manifest_name: &str) -> Result<Vec<SyntheticSample>> {
    let entries = read_manifest(&dir.join(manifest_name))?;
    let mut samples = Vec::with_capacity(entries.len());
    for e in entries {
        let video = read_video(&dir.join(&e.path))?;
        samples.push(SyntheticSample {
            video,
            transcript: e.transcript,
            utterance_id: e.utterance_id,
            duration_s: e.duration_s,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DataConfig {
        DataConfig {
            alphabet: "abcdef".chars().collect(),
            utterance_count: 12,
            min_tokens: 2,
            max_tokens: 5,
            frames_per_token: 4,
            noise_sigma: 0.2,
            frame_h: 8,
            frame_w: 8,
            ..DataConfig::default()
        }
    }

    #[test]
    fn frame_count_is_tokens_times_frames() {
        let cfg = small_cfg();
        let mut rng = SplitRng::new(1);
        let v = render_transcript("ab", &cfg, &mut rng).unwrap();
        assert_eq!(v.t, 8);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg, 9).unwrap();
        let b = generate_dataset(&cfg, 9).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.transcript, y.transcript);
            assert_eq!(x.video.frames, y.video.frames);
        }
        let c = generate_dataset(&cfg, 10).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.video.frames != y.video.frames));
    }

    #[test]
    fn values_stay_in_range_and_duration_matches() {
        let cfg = DataConfig {
            noise_sigma: 2.5,
            ..small_cfg()
        };
        for s in generate_dataset(&cfg, 3).unwrap() {
            assert!(s.video.frames.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!((s.duration_s - s.video.t as f64 / 25.0).abs() < 1e-12);
            assert!(!s.transcript.is_empty());
        }
    }

    #[test]
    fn unknown_character_is_a_config_error() {
        let cfg = small_cfg();
        let mut rng = SplitRng::new(1);
        assert!(render_transcript("az", &cfg, &mut rng).is_err());
    }

    #[test]
    fn language_covers_alphabet_and_separates_pairs() {
        let cfg = DataConfig {
            alphabet: "abcdefgh".chars().collect(),
            ambiguous_pairs: vec![('a', 'b')],
            utterance_count: 400,
            ..small_cfg()
        };
        let samples = generate_dataset(&cfg, 17).unwrap();
        let text: String = samples.iter().map(|s| s.transcript.as_str()).collect();
        for c in &cfg.alphabet {
            assert!(text.contains(*c), "character {c} never generated");
        }
        // Predecessor sets of the ambiguous pair must be disjoint.
        let mut pred_a = std::collections::BTreeSet::new();
        let mut pred_b = std::collections::BTreeSet::new();
        for s in &samples {
            let cs: Vec<char> = s.transcript.chars().collect();
            for w in cs.windows(2) {
                if w[1] == 'a' {
                    pred_a.insert(w[0]);
                }
                if w[1] == 'b' {
                    pred_b.insert(w[0]);
                }
            }
        }
        assert!(pred_a.is_disjoint(&pred_b), "{pred_a:?} vs {pred_b:?}");
    }

    #[test]
    fn dataset_write_load_round_trip() {
        let cfg = small_cfg();
        let samples = generate_dataset(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "train.tsv", &samples).unwrap();
        let loaded = load_dataset(dir.path(), "train.tsv").unwrap();
        assert_eq!(loaded.len(), samples.len());
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.video.t, b.video.t);
            // Storage is f32; values survive within f32 resolution.
            for (x, y) in a.video.frames.iter().zip(&b.video.frames) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
