//! Character error rate via Levenshtein distance.
//!
//! Corpus-level CER is the sum of edit distances over the sum of
//! reference lengths — not the mean of per-utterance rates.

use crate::error::{Error, Result};

/// Levenshtein distance over characters; substitutions, insertions and
/// deletions all cost 1.
pub fn edit_distance(reference: &str, hypothesis: &str) -> usize {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let mut prev: Vec<usize> = (0..=h.len()).collect();
    let mut cur = vec![0usize; h.len() + 1];
    for (i, rc) in r.iter().enumerate() {
        cur[0] = i + 1;
        for (j, hc) in h.iter().enumerate() {
            let sub = prev[j] + usize::from(rc != hc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[h.len()]
}

/// Character error rate: edit distance divided by reference length.
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    let len = reference.chars().count();
    if len == 0 {
        return Err(Error::contract("CER is undefined for an empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / len as f64)
}

/// Corpus CER: summed edit distance over summed reference length.
pub fn corpus_cer<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut dist = 0usize;
    let mut len = 0usize;
    for (r, h) in pairs {
        let l = r.chars().count();
        if l == 0 {
            return Err(Error::contract("CER is undefined for an empty reference"));
        }
        dist += edit_distance(r, h);
        len += l;
    }
    if len == 0 {
        return Err(Error::contract("corpus CER over an empty corpus"));
    }
    Ok(dist as f64 / len as f64)
}

/// One step of an optimal alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignStep {
    Match(char),
    /// (reference char, hypothesis char)
    Substitute(char, char),
    /// Reference char missing from the hypothesis.
    Delete(char),
    /// Extra hypothesis char.
    Insert(char),
}

/// Backtraced optimal alignment; useful for confusion statistics.
pub fn edit_alignment(reference: &str, hypothesis: &str) -> Vec<AlignStep> {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let cols = h.len() + 1;
    let mut dp = vec![0usize; (r.len() + 1) * cols];
    for j in 0..=h.len() {
        dp[j] = j;
    }
    for i in 1..=r.len() {
        dp[i * cols] = i;
        for j in 1..=h.len() {
            let sub = dp[(i - 1) * cols + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            dp[i * cols + j] = sub
                .min(dp[(i - 1) * cols + j] + 1)
                .min(dp[i * cols + j - 1] + 1);
        }
    }
    let mut steps = Vec::new();
    let (mut i, mut j) = (r.len(), h.len());
    while i > 0 || j > 0 {
        let here = dp[i * cols + j];
        if i > 0 && j > 0 && here == dp[(i - 1) * cols + j - 1] + usize::from(r[i - 1] != h[j - 1])
        {
            steps.push(if r[i - 1] == h[j - 1] {
                AlignStep::Match(r[i - 1])
            } else {
                AlignStep::Substitute(r[i - 1], h[j - 1])
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && here == dp[(i - 1) * cols + j] + 1 {
            steps.push(AlignStep::Delete(r[i - 1]));
            i -= 1;
        } else {
            steps.push(AlignStep::Insert(h[j - 1]));
            j -= 1;
        }
    }
    steps.reverse();
    steps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_strings_have_zero_cer() {
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
    }

    #[test]
    fn single_substitution() {
        // Independent DP oracle value: one substitution over length 3.
        assert!((cer("abc", "abd").unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        assert_eq!(cer("ab", "").unwrap(), 1.0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(cer("", "a").is_err());
    }

    #[test]
    fn cer_zero_iff_equal_and_bounded() {
        let mut rng = crate::rng::SplitRng::new(21);
        let chars: Vec<char> = "abcd".chars().collect();
        let mk = |rng: &mut crate::rng::SplitRng, lo: usize| {
            let len = lo + rng.below(6);
            (0..len)
                .map(|_| chars[rng.below(chars.len())])
                .collect::<String>()
        };
        for _ in 0..300 {
            let r = mk(&mut rng, 1);
            let h = mk(&mut rng, 0);
            let c = cer(&r, &h).unwrap();
            assert_eq!(c == 0.0, r == h, "{r} vs {h}");
            let bound = (h.chars().count() as f64 / r.chars().count() as f64).max(1.0);
            assert!(c <= bound + 1e-15);
        }
    }

    #[test]
    fn single_char_substitution_rate() {
        let r = "abcdef";
        let h = "abcxef";
        assert!((cer(r, h).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn corpus_aggregation_is_summed_not_averaged() {
        // distances: 1, 0, 2; lengths: 3, 2, 4.
        let pairs = [("abc", "abd"), ("ab", "ab"), ("abcd", "ad")];
        let corpus = corpus_cer(pairs.iter().copied()).unwrap();
        assert!((corpus - 3.0 / 9.0).abs() < 1e-15);
        let mean_of_rates = pairs
            .iter()
            .map(|(r, h)| cer(r, h).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((corpus - mean_of_rates).abs() > 1e-3);
    }

    #[test]
    fn alignment_distance_agrees_with_dp() {
        let mut rng = crate::rng::SplitRng::new(22);
        let chars: Vec<char> = "xyz".chars().collect();
        for _ in 0..100 {
            let r: String = (0..1 + rng.below(5)).map(|_| chars[rng.below(3)]).collect();
            let h: String = (0..rng.below(6)).map(|_| chars[rng.below(3)]).collect();
            let steps = edit_alignment(&r, &h);
            let cost = steps
                .iter()
                .filter(|s| !matches!(s, AlignStep::Match(_)))
                .count();
            assert_eq!(cost, edit_distance(&r, &h), "{r} vs {h}: {steps:?}");
        }
    }
}
