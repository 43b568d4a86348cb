//! Deterministic glyph rendering.
//!
//! A character's glyph is a fixed pseudo-random binary pattern with 25%
//! of pixels on (+1) and the rest off (-1), derived from the character's
//! code point under a constant seed — the same character always renders
//! identically, in every dataset. The second member of an ambiguous pair
//! reuses the first member's pattern with exactly ceil(5%) of the pixels
//! toggled, making the two visually near-identical.

use crate::rng::{salts, SplitRng, GLYPH_SEED};

fn base_pattern(c: char, h: usize, w: usize) -> Vec<f64> {
    let mut rng = SplitRng::new(GLYPH_SEED).derive(salts::GLYPH, c as u64);
    let n = h * w;
    let on = (n as f64 * 0.25).ceil() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut g = vec![-1.0; n];
    for &i in idx.iter().take(on) {
        g[i] = 1.0;
    }
    g
}

/// Glyph for `c` at the given frame size, honoring ambiguous pairs: the
/// second member of a pair is the first member's glyph with ceil(5%) of
/// pixels flipped.
pub fn glyph(c: char, h: usize, w: usize, ambiguous_pairs: &[(char, char)]) -> Vec<f64> {
    if let Some(&(first, second)) = ambiguous_pairs.iter().find(|&&(_, y)| y == c) {
        let mut g = base_pattern(first, h, w);
        let n = h * w;
        let flips = (n as f64 * 0.05).ceil() as usize;
        let mut rng = SplitRng::new(GLYPH_SEED).derive(
            salts::GLYPH_PAIR,
            ((first as u64) << 32) | second as u64,
        );
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        for &i in idx.iter().take(flips) {
            g[i] = -g[i];
        }
        return g;
    }
    base_pattern(c, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_rate_is_a_quarter() {
        let g = glyph('a', 16, 16, &[]);
        let on = g.iter().filter(|&&v| v > 0.0).count();
        assert_eq!(on, 64);
    }

    #[test]
    fn glyphs_are_fixed_and_distinct() {
        assert_eq!(glyph('a', 8, 8, &[]), glyph('a', 8, 8, &[]));
        let a = glyph('a', 8, 8, &[]);
        let b = glyph('b', 8, 8, &[]);
        let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert!(diff > 8, "independent glyphs differ in {diff} pixels only");
    }

    #[test]
    fn ambiguous_pair_differs_in_exactly_ceil_five_percent() {
        let pairs = vec![('a', 'b')];
        let a = glyph('a', 16, 16, &pairs);
        let b = glyph('b', 16, 16, &pairs);
        let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert_eq!(diff, 13); // ceil(0.05 * 256)
        // First member keeps its independent pattern.
        assert_eq!(a, glyph('a', 16, 16, &[]));
    }
}
