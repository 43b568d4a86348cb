//! Character-level token inventory.
//!
//! Ids are dense. The first three are fixed: blank (0) for CTC, unk (1)
//! for out-of-inventory characters, and a single shared sos/eos (2) used
//! by the attention decoders and the language model. Regular characters
//! follow, sorted by code point, so construction is independent of corpus
//! order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const BLANK: TokenId = 0;
pub const UNK: TokenId = 1;
pub const SOS_EOS: TokenId = 2;

const SPECIALS: [&str; 3] = ["<blank>", "<unk>", "<sos/eos>"];

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    by_char: HashMap<char, TokenId>,
}

impl Vocab {
    /// Builds the vocabulary from transcripts: the three specials followed
    /// by every distinct character, sorted by code point. Any permutation
    /// of the corpus yields the same vocabulary.
    pub fn build_from_corpus<S: AsRef<str>>(transcripts: &[S]) -> Result<Vocab> {
        if transcripts.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        let mut chars: Vec<char> = transcripts
            .iter()
            .flat_map(|t| t.as_ref().chars())
            .collect();
        chars.sort_unstable();
        chars.dedup();
        Ok(Vocab::from_chars(&chars))
    }

    pub fn from_chars(chars: &[char]) -> Vocab {
        let mut sorted: Vec<char> = chars.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut by_char = HashMap::new();
        for c in sorted {
            by_char.insert(c, tokens.len());
            tokens.push(c.to_string());
        }
        Vocab { tokens, by_char }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id)
            .map(|s| s.as_str())
            .ok_or(Error::TokenRange {
                id,
                size: self.size(),
            })
    }

    pub fn id_of(&self, c: char) -> TokenId {
        self.by_char.get(&c).copied().unwrap_or(UNK)
    }

    /// Character ids for a string; unknown characters map to unk.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.chars().map(|c| self.id_of(c)).collect()
    }

    /// Text for a token sequence. Blank and sos/eos are skipped; unk
    /// renders as U+FFFD. Ids past the vocabulary are a range error.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id >= self.size() {
                return Err(Error::TokenRange {
                    id,
                    size: self.size(),
                });
            }
            match id {
                BLANK | SOS_EOS => {}
                UNK => out.push('\u{FFFD}'),
                _ => {
                    let _ = write!(out, "{}", self.tokens[id]);
                }
            }
        }
        Ok(out)
    }

    // ── Vocabulary file: one token per line, line number = id ──────────

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 3 || lines[0] != SPECIALS[0] || lines[1] != SPECIALS[1] || lines[2] != SPECIALS[2] {
            return Err(Error::format(format!(
                "vocabulary file {} must start with {:?}",
                path.display(),
                SPECIALS
            )));
        }
        let mut chars = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(3) {
            let mut cs = line.chars();
            let (Some(c), None) = (cs.next(), cs.next()) else {
                return Err(Error::format(format!(
                    "vocabulary line {} is not a single character: {line:?}",
                    i + 1
                )));
            };
            chars.push(c);
        }
        let vocab = Vocab::from_chars(&chars);
        if vocab.size() != lines.len() {
            return Err(Error::format("vocabulary file contains duplicate characters"));
        }
        Ok(vocab)
    }
}
