//! Connectionist temporal classification: loss, collapse map, greedy
//! decoding, and incremental prefix scoring for beam search.
//!
//! The loss runs the forward recursion over the blank-interleaved state
//! lattice in log space; the product form underflows even at toy sizes.
//! Its backward pass is the mechanical adjoint of the forward recursion
//! (reverse-mode through each log-sum-exp), so the gradient is exact and
//! is validated by finite differences. A brute-force path enumeration
//! lives in [`reference`] as the independent oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::{TokenId, BLANK};

// ── Collapse map ───────────────────────────────────────────────────────

/// Collapses a frame-level path: merge adjacent repeats, then delete
/// blanks. The output never contains blank.
pub fn collapse(path: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev: Option<TokenId> = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Minimum number of frames a target needs: one per label plus one
/// separator blank between adjacent repeats.
pub fn min_frames(target: &[TokenId]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

// ── Loss ───────────────────────────────────────────────────────────────

/// CTC loss result. `loss` is -log p(target | log_probs) as a taped
/// scalar when the target is alignable; infeasible targets are flagged
/// instead of erroring so a training batch survives them, and contribute
/// zero gradient.
pub struct CtcLossResult {
    pub loss: Option<Tensor>,
    pub infeasible: bool,
}

impl CtcLossResult {
    /// Loss value; +inf when infeasible.
    pub fn value(&self) -> f64 {
        self.loss
            .as_ref()
            .map(|t| t.item())
            .unwrap_or(f64::INFINITY)
    }
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

/// CTC loss over a [T, V] matrix of per-frame log-probabilities.
///
/// The target must be blank-free. Returns a flagged result when the
/// target cannot be aligned within T frames.
pub fn ctc_loss(log_probs: &Tensor, target: &[TokenId]) -> Result<CtcLossResult> {
    let shape = log_probs.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "ctc_loss",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    let (t_len, v) = (shape[0], shape[1]);
    for &y in target {
        if y == BLANK {
            return Err(Error::contract("CTC target contains blank"));
        }
        if y >= v {
            return Err(Error::TokenRange { id: y, size: v });
        }
    }
    if min_frames(target) > t_len {
        return Ok(CtcLossResult {
            loss: None,
            infeasible: true,
        });
    }

    // Blank-interleaved states: blank, y1, blank, y2, ..., blank.
    let s_len = 2 * target.len() + 1;
    let label = |s: usize| -> TokenId {
        if s % 2 == 0 {
            BLANK
        } else {
            target[s / 2]
        }
    };
    let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);

    let lp = log_probs.data_vec();
    let at = |t: usize, k: TokenId| lp[t * v + k];

    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = at(0, BLANK);
    if s_len > 1 {
        alpha[1] = at(0, label(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let stay = alpha[(t - 1) * s_len + s];
            let step = if s >= 1 {
                alpha[(t - 1) * s_len + s - 1]
            } else {
                f64::NEG_INFINITY
            };
            let skip = if skip_ok(s) {
                alpha[(t - 1) * s_len + s - 2]
            } else {
                f64::NEG_INFINITY
            };
            let m = lse3(stay, step, skip);
            alpha[t * s_len + s] = if m == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                m + at(t, label(s))
            };
        }
    }
    let tail_blank = alpha[(t_len - 1) * s_len + s_len - 1];
    let tail_label = if s_len > 1 {
        alpha[(t_len - 1) * s_len + s_len - 2]
    } else {
        f64::NEG_INFINITY
    };
    let total = lse2(tail_blank, tail_label);
    debug_assert!(total > f64::NEG_INFINITY, "feasible target with zero mass");

    let target_c: Vec<TokenId> = target.to_vec();
    let lp_c = lp.clone();
    let loss = Tensor::from_op(
        "ctc_loss",
        vec![1],
        vec![-total],
        vec![log_probs.clone()],
        Box::new(move |args| {
            // Mechanical adjoint of the forward recursion.
            let g = args.out_grad[0];
            let s_len = 2 * target_c.len() + 1;
            let label = |s: usize| -> TokenId {
                if s % 2 == 0 {
                    BLANK
                } else {
                    target_c[s / 2]
                }
            };
            let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);
            let mut abar = vec![0.0; t_len * s_len];
            let mut dlp = vec![0.0; t_len * v];
            // loss = -lse2(tail states): seed their adjoints.
            abar[(t_len - 1) * s_len + s_len - 1] = -g * (tail_blank - total).exp();
            if s_len > 1 {
                abar[(t_len - 1) * s_len + s_len - 2] = -g * (tail_label - total).exp();
            }
            for t in (1..t_len).rev() {
                for s in 0..s_len {
                    let a = abar[t * s_len + s];
                    if a == 0.0 {
                        continue;
                    }
                    let here = alpha[t * s_len + s];
                    if here == f64::NEG_INFINITY {
                        continue;
                    }
                    dlp[t * v + label(s)] += a;
                    // alpha[t][s] = lp + m, with m the log-sum-exp of the
                    // incoming states; distribute a by softmax weights.
                    let m = here - lp_c[t * v + label(s)];
                    let mut push = |s_prev: usize| {
                        let prev = alpha[(t - 1) * s_len + s_prev];
                        if prev > f64::NEG_INFINITY {
                            abar[(t - 1) * s_len + s_prev] += a * (prev - m).exp();
                        }
                    };
                    push(s);
                    if s >= 1 {
                        push(s - 1);
                    }
                    if skip_ok(s) {
                        push(s - 2);
                    }
                }
            }
            dlp[BLANK] += abar[0];
            if s_len > 1 {
                dlp[label(1)] += abar[1];
            }
            vec![Some(dlp)]
        }),
    )?;
    Ok(CtcLossResult {
        loss: Some(loss),
        infeasible: false,
    })
}

// ── Greedy decoding ────────────────────────────────────────────────────

/// Best-path decoding: collapse of the per-frame argmax, ties broken
/// toward the lowest token id.
pub fn greedy_decode(log_probs: &Tensor) -> Result<Vec<TokenId>> {
    let shape = log_probs.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "greedy_decode",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    let (t_len, v) = (shape[0], shape[1]);
    let lp = log_probs.data();
    let mut path = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let row = &lp[t * v..(t + 1) * v];
        let mut best = 0;
        for (k, &val) in row.iter().enumerate() {
            if val > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    Ok(collapse(&path))
}

// ── Prefix scoring for joint beam search ───────────────────────────────

/// Incremental CTC prefix scorer over a fixed [T, V] log-probability
/// matrix. For a prefix g, the score psi(g) is the log-probability that
/// the collapsed output *starts with* g; the terminal score is the
/// log-probability that the collapsed output *equals* g. Each extension
/// costs O(T).
pub struct CtcPrefixScorer {
    lp: Vec<f64>,
    t_len: usize,
    v: usize,
}

/// Cached per-prefix state: log mass of paths realizing the prefix whose
/// last frame is the final label (`nonblank`) or a trailing blank
/// (`blank`), per time step.
#[derive(Debug, Clone)]
pub struct CtcPrefixState {
    prefix: Vec<TokenId>,
    nonblank: Vec<f64>,
    blank: Vec<f64>,
    score: f64,
}

impl CtcPrefixState {
    pub fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    /// psi(g): log mass of all paths whose collapse starts with g.
    pub fn score(&self) -> f64 {
        self.score
    }

    /// Log mass of paths whose collapse equals g exactly; this is the
    /// score a hypothesis receives when it finalizes.
    pub fn terminal(&self) -> f64 {
        lse2(self.nonblank[self.nonblank.len() - 1], self.blank[self.blank.len() - 1])
    }
}

impl CtcPrefixScorer {
    pub fn new(log_probs: &Tensor) -> Result<CtcPrefixScorer> {
        let shape = log_probs.shape();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "ctc_prefix_scorer",
                lhs: shape.to_vec(),
                rhs: vec![],
            });
        }
        Ok(CtcPrefixScorer {
            lp: log_probs.data_vec(),
            t_len: shape[0],
            v: shape[1],
        })
    }

    fn at(&self, t: usize, k: TokenId) -> f64 {
        self.lp[t * self.v + k]
    }

    /// State for the empty prefix: all-blank mass per time step.
    pub fn initial(&self) -> CtcPrefixState {
        let mut blank = vec![0.0; self.t_len];
        let mut acc = 0.0;
        for t in 0..self.t_len {
            acc += self.at(t, BLANK);
            blank[t] = acc;
        }
        CtcPrefixState {
            prefix: Vec::new(),
            nonblank: vec![f64::NEG_INFINITY; self.t_len],
            blank,
            score: 0.0,
        }
    }

    /// Extends `state` (which must belong to `prefix`) by candidate `c`.
    /// Returns the new prefix score psi(prefix . c) and the new state.
    pub fn extend(
        &self,
        prefix: &[TokenId],
        c: TokenId,
        state: &CtcPrefixState,
    ) -> Result<(f64, CtcPrefixState)> {
        if state.prefix != prefix {
            return Err(Error::contract(format!(
                "stale CTC prefix state: cached for {:?}, asked to extend {:?}",
                state.prefix, prefix
            )));
        }
        if c == BLANK {
            return Err(Error::contract("cannot extend a CTC prefix with blank"));
        }
        if c >= self.v {
            return Err(Error::TokenRange { id: c, size: self.v });
        }
        let t_len = self.t_len;
        let last = prefix.last().copied();
        let mut nonblank = vec![f64::NEG_INFINITY; t_len];
        let mut blank = vec![f64::NEG_INFINITY; t_len];
        // phi(t): mass of paths realizing g through frame t that may start
        // emitting c at frame t+1; repeats need a separating blank.
        let phi = |t: usize| -> f64 {
            let b = state.blank[t];
            if last == Some(c) {
                b
            } else {
                lse2(b, state.nonblank[t])
            }
        };
        nonblank[0] = if prefix.is_empty() {
            self.at(0, c)
        } else {
            f64::NEG_INFINITY
        };
        let mut psi = nonblank[0];
        for t in 1..t_len {
            nonblank[t] = lse2(nonblank[t - 1], phi(t - 1)) + self.at(t, c);
            blank[t] = lse2(blank[t - 1], nonblank[t - 1]) + self.at(t, BLANK);
            psi = lse2(psi, phi(t - 1) + self.at(t, c));
        }
        let mut new_prefix = prefix.to_vec();
        new_prefix.push(c);
        Ok((
            psi,
            CtcPrefixState {
                prefix: new_prefix,
                nonblank,
                blank,
                score: psi,
            },
        ))
    }
}

// ── Brute-force reference ──────────────────────────────────────────────

/// Exhaustive-path reference implementations, kept separate from the DP
/// code so tests can pit the two against each other.
pub mod reference {
    use super::*;

    /// -log p(target) by summing the probability of every path in V^T
    /// whose collapse equals the target.
    pub fn nll_by_enumeration(log_probs: &Tensor, target: &[TokenId]) -> f64 {
        let shape = log_probs.shape();
        let (t_len, v) = (shape[0], shape[1]);
        let lp = log_probs.data_vec();
        let mut path = vec![0usize; t_len];
        let mut total = f64::NEG_INFINITY;
        loop {
            if collapse(&path) == target {
                let logp: f64 = path.iter().enumerate().map(|(t, &k)| lp[t * v + k]).sum();
                total = lse2(total, logp);
            }
            // Odometer increment over V^T.
            let mut i = 0;
            loop {
                if i == t_len {
                    return -total;
                }
                path[i] += 1;
                if path[i] < v {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    /// Every distinct collapsed output reachable from some path in V^T.
    pub fn all_collapsed_outputs(t_len: usize, v: usize) -> Vec<Vec<TokenId>> {
        let mut seen = std::collections::BTreeSet::new();
        let mut path = vec![0usize; t_len];
        loop {
            seen.insert(collapse(&path));
            let mut i = 0;
            loop {
                if i == t_len {
                    return seen.into_iter().collect();
                }
                path[i] += 1;
                if path[i] < v {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }
}
