//! Joint CTC/attention one-pass beam search with optional language-model
//! shallow fusion.
//!
//! Hypotheses advance synchronously over output positions. At each step
//! every live hypothesis is expanded by its top attention candidates
//! (pre-selection keeps ceil(beam * factor) tokens); each extension is
//! scored by
//!
//!   combined = (1 - ctc_weight) * attn + ctc_weight * ctc + lm_weight * lm
//!
//! where `attn` sums left-decoder step log-probabilities, `ctc` is the
//! incremental prefix score over the output CTC lattice, and `lm` sums
//! language-model step log-probabilities (eos excluded by default). A
//! hypothesis emitting eos is finalized: its attention score takes the
//! eos step, its CTC score becomes the full-sequence terminal mass, and
//! no further extension happens. Search ends when every beam slot has
//! finished or the length cap is reached; ties break lexicographically
//! on the prefix so decoding is deterministic.

use crate::ctc::{CtcPrefixScorer, CtcPrefixState};
use crate::decoder::{DecoderState, TransformerDecoder};
use crate::error::{Error, Result};
use crate::lm::{LmState, RnnLm};
use crate::tensor::Tensor;
use crate::vocab::{TokenId, BLANK, SOS_EOS};

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub ctc_weight: f64,
    pub lm_weight: f64,
    pub beam_size: usize,
    /// Cap on output length; 0 means "number of frames".
    pub max_len: usize,
    /// Pre-selection keeps ceil(beam_size * this) candidates per
    /// hypothesis, ranked by attention score.
    pub pre_select_factor: f64,
    /// Divide final scores by (length + 1); off by default.
    pub length_normalize: bool,
    /// Add the language model's eos probability when finalizing.
    pub lm_score_eos: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            ctc_weight: 0.3,
            lm_weight: 0.1,
            beam_size: 8,
            max_len: 0,
            pre_select_factor: 1.5,
            length_normalize: false,
            lm_score_eos: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 {
            return Err(Error::config("beam size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::config(format!(
                "ctc_weight {} outside [0, 1]",
                self.ctc_weight
            )));
        }
        if self.lm_weight < 0.0 {
            return Err(Error::config("lm_weight must be non-negative"));
        }
        if self.pre_select_factor <= 0.0 {
            return Err(Error::config("pre_select_factor must be positive"));
        }
        Ok(())
    }
}

/// A finished hypothesis with its score components (all log-domain,
/// each component <= 0).
#[derive(Debug, Clone)]
pub struct ScoredHypothesis {
    pub tokens: Vec<TokenId>,
    pub attn_score: f64,
    pub ctc_score: f64,
    pub lm_score: f64,
    pub combined: f64,
}

impl ScoredHypothesis {
    /// (attn, ctc, lm, combined).
    pub fn breakdown(&self) -> (f64, f64, f64, f64) {
        (self.attn_score, self.ctc_score, self.lm_score, self.combined)
    }
}

struct LiveHypothesis {
    tokens: Vec<TokenId>,
    attn_score: f64,
    lm_score: f64,
    ctc_state: CtcPrefixState,
    dec_state: DecoderState,
    dec_logprobs: Vec<f64>,
    lm_state: Option<LmState>,
    lm_logprobs: Option<Vec<f64>>,
}

/// Everything the search needs about one utterance.
pub struct JointScorer<'a> {
    pub decoder: &'a TransformerDecoder,
    /// Output CTC log-probabilities [T, V].
    pub ctc_log_probs: &'a Tensor,
    /// Encoder features [T, d] the decoder cross-attends to.
    pub memory: &'a Tensor,
    pub lm: Option<&'a RnnLm>,
}

fn combined_of(cfg: &DecodeConfig, attn: f64, ctc: f64, lm: f64, len: usize) -> f64 {
    // Zero-weighted components are not consulted: a CTC-infeasible prefix
    // scores -inf there, and 0 * -inf would poison a pure-attention search.
    let mut raw = (1.0 - cfg.ctc_weight) * attn;
    if cfg.ctc_weight > 0.0 {
        raw += cfg.ctc_weight * ctc;
    }
    if cfg.lm_weight > 0.0 {
        raw += cfg.lm_weight * lm;
    }
    if cfg.length_normalize {
        raw / (len + 1) as f64
    } else {
        raw
    }
}

/// Runs the search and returns finished hypotheses, best first.
pub fn joint_decode(scorer: &JointScorer, cfg: &DecodeConfig) -> Result<Vec<ScoredHypothesis>> {
    cfg.validate()?;
    let t_frames = scorer.ctc_log_probs.shape()[0];
    let vocab = scorer.ctc_log_probs.shape()[1];
    let max_len = if cfg.max_len == 0 { t_frames } else { cfg.max_len };
    let prefix_scorer = CtcPrefixScorer::new(scorer.ctc_log_probs)?;

    let (dec_logprobs, dec_state) = {
        let state = scorer.decoder.init_state(scorer.memory)?;
        scorer.decoder.step(&state, SOS_EOS)?
    };
    let (lm_logprobs, lm_state) = match scorer.lm {
        Some(lm) if cfg.lm_weight > 0.0 => {
            let (lp, st) = lm.score_step(&lm.initial_state(), SOS_EOS)?;
            (Some(lp), Some(st))
        }
        _ => (None, None),
    };
    let mut live = vec![LiveHypothesis {
        tokens: Vec::new(),
        attn_score: 0.0,
        lm_score: 0.0,
        ctc_state: prefix_scorer.initial(),
        dec_state,
        dec_logprobs,
        lm_state,
        lm_logprobs,
    }];
    let mut finished: Vec<ScoredHypothesis> = Vec::new();
    let pre_select = ((cfg.beam_size as f64) * cfg.pre_select_factor).ceil() as usize;

    for _step in 0..=max_len {
        let at_cap = _step == max_len;
        let mut candidates: Vec<(usize, TokenId, f64)> = Vec::new(); // (live idx, token, combined)
        for (hi, h) in live.iter().enumerate() {
            if at_cap {
                candidates.push((hi, SOS_EOS, score_eos(cfg, h)));
                continue;
            }
            // Rank tokens by attention score; blank never appears in the
            // output alphabet and unk is never proposed.
            let mut order: Vec<TokenId> = (0..vocab)
                .filter(|&k| k != BLANK && k != crate::vocab::UNK)
                .collect();
            order.sort_by(|&a, &b| {
                h.dec_logprobs[b]
                    .partial_cmp(&h.dec_logprobs[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            for &tok in order.iter().take(pre_select.min(order.len())) {
                let combined = if tok == SOS_EOS {
                    score_eos(cfg, h)
                } else {
                    if h.tokens.len() >= max_len {
                        continue;
                    }
                    let attn = h.attn_score + h.dec_logprobs[tok];
                    let (psi, _) = prefix_scorer.extend(&h.tokens, tok, &h.ctc_state)?;
                    let lm = h.lm_score
                        + h.lm_logprobs.as_ref().map(|lp| lp[tok]).unwrap_or(0.0);
                    combined_of(cfg, attn, psi, lm, h.tokens.len() + 1)
                };
                if combined > f64::NEG_INFINITY {
                    candidates.push((hi, tok, combined));
                }
            }
        }
        // Deterministic order: score desc, then prefix lexicographic.
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| {
                    let pa = (&live[a.0].tokens, a.1);
                    let pb = (&live[b.0].tokens, b.1);
                    pa.cmp(&pb)
                })
        });

        // Walk candidates best-first until the next beam is full. An eos
        // candidate that ranks above that cutoff finalizes its hypothesis
        // (without consuming a beam slot); everything below is pruned, so
        // a hypothesis only ends when ending is among the selected moves.
        let mut next_live: Vec<LiveHypothesis> = Vec::with_capacity(cfg.beam_size);
        for (hi, tok, combined) in candidates {
            if next_live.len() >= cfg.beam_size {
                break;
            }
            if tok == SOS_EOS {
                let h = &live[hi];
                finished.push(ScoredHypothesis {
                    tokens: h.tokens.clone(),
                    attn_score: h.attn_score + h.dec_logprobs[SOS_EOS],
                    ctc_score: h.ctc_state.terminal(),
                    lm_score: finished_lm_score(cfg, h),
                    combined,
                });
                continue;
            }
            let h = &live[hi];
            let attn = h.attn_score + h.dec_logprobs[tok];
            let (psi, ctc_state) = prefix_scorer.extend(&h.tokens, tok, &h.ctc_state)?;
            debug_assert!((combined_of(cfg, attn, psi,
                h.lm_score + h.lm_logprobs.as_ref().map(|lp| lp[tok]).unwrap_or(0.0),
                h.tokens.len() + 1) - combined).abs() < 1e-12);
            let (dec_logprobs, dec_state) = scorer.decoder.step(&h.dec_state, tok)?;
            let (lm_logprobs, lm_state, lm_score) = match (&h.lm_state, &h.lm_logprobs) {
                (Some(st), Some(lp)) => {
                    let lm = scorer.lm.expect("lm state without lm");
                    let (next_lp, next_st) = lm.score_step(st, tok)?;
                    (Some(next_lp), Some(next_st), h.lm_score + lp[tok])
                }
                _ => (None, None, 0.0),
            };
            let mut tokens = h.tokens.clone();
            tokens.push(tok);
            next_live.push(LiveHypothesis {
                tokens,
                attn_score: attn,
                lm_score,
                ctc_state,
                dec_state,
                dec_logprobs,
                lm_state,
                lm_logprobs,
            });
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }

    finished.sort_by(|a, b| {
        b.combined
            .partial_cmp(&a.combined)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    finished.truncate(cfg.beam_size.max(1));
    if finished.is_empty() {
        return Err(Error::contract("beam search finished no hypothesis"));
    }
    Ok(finished)
}

fn score_eos(cfg: &DecodeConfig, h: &LiveHypothesis) -> f64 {
    let attn = h.attn_score + h.dec_logprobs[SOS_EOS];
    let ctc = h.ctc_state.terminal();
    combined_of(cfg, attn, ctc, finished_lm_score(cfg, h), h.tokens.len())
}

fn finished_lm_score(cfg: &DecodeConfig, h: &LiveHypothesis) -> f64 {
    if cfg.lm_score_eos {
        h.lm_score + h.lm_logprobs.as_ref().map(|lp| lp[SOS_EOS]).unwrap_or(0.0)
    } else {
        h.lm_score
    }
}

/// Recomputes a finished hypothesis's scores from scratch (fresh decoder,
/// CTC, and LM passes). The breakdown of a search result must agree with
/// this to within numerical noise.
pub fn recompute_breakdown(
    scorer: &JointScorer,
    cfg: &DecodeConfig,
    tokens: &[TokenId],
) -> Result<ScoredHypothesis> {
    let prefix_scorer = CtcPrefixScorer::new(scorer.ctc_log_probs)?;
    let mut ctc_state = prefix_scorer.initial();
    let mut dec_state = scorer.decoder.init_state(scorer.memory)?;
    let mut attn = 0.0;
    let (mut dec_lp, next) = scorer.decoder.step(&dec_state, SOS_EOS)?;
    dec_state = next;
    let mut lm_total = 0.0;
    let mut lm_pair = match scorer.lm {
        Some(lm) if cfg.lm_weight > 0.0 => {
            let (lp, st) = lm.score_step(&lm.initial_state(), SOS_EOS)?;
            Some((lp, st))
        }
        _ => None,
    };
    for (i, &tok) in tokens.iter().enumerate() {
        attn += dec_lp[tok];
        let (_, next_ctc) = prefix_scorer.extend(&tokens[..i], tok, &ctc_state)?;
        ctc_state = next_ctc;
        let (lp, next) = scorer.decoder.step(&dec_state, tok)?;
        dec_lp = lp;
        dec_state = next;
        if let Some((lm_lp, lm_st)) = lm_pair.take() {
            lm_total += lm_lp[tok];
            let lm = scorer.lm.expect("lm");
            lm_pair = Some(lm.score_step(&lm_st, tok)?);
        }
    }
    attn += dec_lp[SOS_EOS];
    if cfg.lm_score_eos {
        if let Some((lm_lp, _)) = &lm_pair {
            lm_total += lm_lp[SOS_EOS];
        }
    }
    let ctc = ctc_state.terminal();
    Ok(ScoredHypothesis {
        tokens: tokens.to_vec(),
        attn_score: attn,
        ctc_score: ctc,
        lm_score: lm_total,
        combined: combined_of(cfg, attn, ctc, lm_total, tokens.len()),
    })
}

/// Exhaustive joint-score argmax over every sequence up to `max_len`
/// drawn from the non-special alphabet; the brute-force oracle for the
/// beam search.
pub fn exhaustive_best(
    scorer: &JointScorer,
    cfg: &DecodeConfig,
    alphabet: &[TokenId],
    max_len: usize,
) -> Result<ScoredHypothesis> {
    let mut best: Option<ScoredHypothesis> = None;
    let mut stack: Vec<Vec<TokenId>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        let cand = recompute_breakdown(scorer, cfg, &prefix)?;
        best = match best {
            None => Some(cand),
            Some(b) => {
                if cand.combined > b.combined
                    || (cand.combined == b.combined && cand.tokens < b.tokens)
                {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        };
        if prefix.len() < max_len {
            for &c in alphabet {
                let mut next = prefix.clone();
                next.push(c);
                stack.push(next);
            }
        }
    }
    best.ok_or_else(|| Error::contract("empty enumeration"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::lm::{LmConfig, RnnLm};
    use crate::rng::SplitRng;

    struct Fixture {
        decoder: TransformerDecoder,
        lm: RnnLm,
        memory: Tensor,
        ctc_lp: Tensor,
    }

    fn fixture(seed: u64, vocab: usize, t: usize) -> Fixture {
        let mut rng = SplitRng::new(seed);
        let decoder = TransformerDecoder::new(
            DecoderConfig {
                layers: 1,
                d_model: 8,
                heads: 2,
                ffn_dim: 16,
                max_positions: 16,
            },
            vocab,
            &mut rng,
        )
        .unwrap();
        let lm = RnnLm::new(
            LmConfig {
                layers: 1,
                hidden: 8,
                embed_dim: 6,
            },
            vocab,
            &mut rng,
        );
        let memory = Tensor::from_vec(
            &[t, 8],
            (0..t * 8).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let logits = Tensor::from_vec(
            &[t, vocab],
            (0..t * vocab).map(|_| rng.uniform_in(-1.5, 1.5)).collect(),
        )
        .unwrap();
        let ctc_lp = logits.log_softmax(1).unwrap();
        Fixture {
            decoder,
            lm,
            memory,
            ctc_lp,
        }
    }

    fn scorer(f: &Fixture) -> JointScorer<'_> {
        JointScorer {
            decoder: &f.decoder,
            ctc_log_probs: &f.ctc_lp,
            memory: &f.memory,
            lm: Some(&f.lm),
        }
    }

    #[test]
    fn beam_one_attention_only_matches_greedy_decoder() {
        let f = fixture(201, 7, 5);
        let cfg = DecodeConfig {
            ctc_weight: 0.0,
            lm_weight: 0.0,
            beam_size: 1,
            ..DecodeConfig::default()
        };
        let out = joint_decode(&scorer(&f), &cfg).unwrap();
        // Greedy argmax chain over the left decoder alone.
        let mut state = f.decoder.init_state(&f.memory).unwrap();
        let (mut lp, next) = f.decoder.step(&state, SOS_EOS).unwrap();
        state = next;
        let mut tokens = Vec::new();
        for _ in 0..5 {
            let mut best = SOS_EOS;
            for k in 0..7 {
                if k != BLANK && k != crate::vocab::UNK && lp[k] > lp[best] {
                    best = k;
                }
            }
            if best == SOS_EOS {
                break;
            }
            tokens.push(best);
            let (nlp, nstate) = f.decoder.step(&state, best).unwrap();
            lp = nlp;
            state = nstate;
        }
        assert_eq!(out[0].tokens, tokens);
    }

    #[test]
    fn zero_lm_weight_makes_the_lm_irrelevant() {
        let f = fixture(202, 7, 4);
        let cfg = DecodeConfig {
            lm_weight: 0.0,
            beam_size: 4,
            ..DecodeConfig::default()
        };
        let with_lm = joint_decode(&scorer(&f), &cfg).unwrap();
        let mut other = scorer(&f);
        let other_lm = {
            let mut rng = SplitRng::new(999);
            RnnLm::new(
                LmConfig {
                    layers: 1,
                    hidden: 8,
                    embed_dim: 6,
                },
                7,
                &mut rng,
            )
        };
        other.lm = Some(&other_lm);
        let swapped = joint_decode(&other, &cfg).unwrap();
        assert_eq!(with_lm[0].tokens, swapped[0].tokens);
        assert_eq!(with_lm[0].combined, swapped[0].combined);
        let mut none = scorer(&f);
        none.lm = None;
        let absent = joint_decode(&none, &cfg).unwrap();
        assert_eq!(with_lm[0].tokens, absent.first().unwrap().tokens);
    }

    #[test]
    fn matches_exhaustive_enumeration_on_tiny_instances() {
        for seed in 0..4 {
            let f = fixture(300 + seed, 7, 4);
            let cfg = DecodeConfig {
                ctc_weight: 0.3,
                lm_weight: 0.1,
                beam_size: 256,
                max_len: 3,
                ..DecodeConfig::default()
            };
            let s = scorer(&f);
            let beam = joint_decode(&s, &cfg).unwrap();
            let oracle = exhaustive_best(&s, &cfg, &[3, 4, 5, 6], 3).unwrap();
            assert_eq!(beam[0].tokens, oracle.tokens, "seed {seed}");
            assert!((beam[0].combined - oracle.combined).abs() < 1e-9);
        }
    }

    #[test]
    fn breakdown_recomputes_from_scratch() {
        let f = fixture(204, 7, 5);
        let cfg = DecodeConfig {
            beam_size: 4,
            ..DecodeConfig::default()
        };
        let s = scorer(&f);
        for hyp in joint_decode(&s, &cfg).unwrap() {
            let re = recompute_breakdown(&s, &cfg, &hyp.tokens).unwrap();
            assert!((re.attn_score - hyp.attn_score).abs() < 1e-9);
            assert!((re.ctc_score - hyp.ctc_score).abs() < 1e-9);
            assert!((re.lm_score - hyp.lm_score).abs() < 1e-9);
            assert!((re.combined - hyp.combined).abs() < 1e-9);
            // Combined is the weighted sum of the parts.
            let expect = 0.7 * hyp.attn_score + 0.3 * hyp.ctc_score + 0.1 * hyp.lm_score;
            assert!((hyp.combined - expect).abs() < 1e-12);
            for part in [hyp.attn_score, hyp.ctc_score, hyp.lm_score] {
                assert!(part <= 1e-12, "log score {part} above zero");
            }
        }
    }

    #[test]
    fn decoding_is_deterministic_and_sorted_without_duplicates() {
        let f = fixture(205, 7, 5);
        let cfg = DecodeConfig {
            beam_size: 6,
            ..DecodeConfig::default()
        };
        let s = scorer(&f);
        let a = joint_decode(&s, &cfg).unwrap();
        let b = joint_decode(&s, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.combined.to_bits(), y.combined.to_bits());
        }
        for w in a.windows(2) {
            assert!(w[0].combined >= w[1].combined);
            assert_ne!(w[0].tokens, w[1].tokens);
        }
        let mut seen = std::collections::BTreeSet::new();
        for h in &a {
            assert!(seen.insert(h.tokens.clone()), "duplicate {:?}", h.tokens);
        }
    }

    #[test]
    fn beam_zero_is_a_config_error() {
        let f = fixture(206, 7, 4);
        let cfg = DecodeConfig {
            beam_size: 0,
            ..DecodeConfig::default()
        };
        assert!(joint_decode(&scorer(&f), &cfg).is_err());
    }
}

