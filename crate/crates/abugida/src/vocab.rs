//! Token vocabularies: five reserved specials at fixed ids, then corpus
//! tokens ordered by descending frequency with first-occurrence order
//! breaking ties, so a rebuild from the same corpus is byte-identical.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::segment::parse_syllable_line;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const MASK: TokenId = 4;

pub const SPECIALS: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocab I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocab file line {0}: expected `token<TAB>frequency`")]
    BadLine(usize),
    #[error("vocab file contains duplicate or reserved token {0:?}")]
    BadToken(String),
}

/// Immutable token/id bijection with reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    /// Corpus frequency per token; zero for the five specials.
    freqs: Vec<u64>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds from corpus lines. Tokens seen fewer than `min_freq` times
    /// are dropped; special literals occurring in the corpus are ignored
    /// (they already have reserved ids).
    pub fn build<I, S>(lines: I, min_freq: u64) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut first_seen: HashMap<String, usize> = HashMap::new();
        let mut position = 0usize;
        for line in lines {
            for token in parse_syllable_line(line.as_ref()) {
                if SPECIALS.contains(&token.as_str()) {
                    continue;
                }
                *freq.entry(token.clone()).or_insert(0) += 1;
                first_seen.entry(token).or_insert(position);
                position += 1;
            }
        }
        let mut ordered: Vec<(String, u64)> =
            freq.into_iter().filter(|&(_, f)| f >= min_freq).collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| first_seen[&a.0].cmp(&first_seen[&b.0])));
        Vocab::from_entries(ordered)
    }

    /// Builds from a corpus file, one token line per row.
    pub fn build_from_file(path: &Path, min_freq: u64) -> Result<Vocab, VocabError> {
        let text = fs::read_to_string(path)?;
        Ok(Vocab::build(text.lines(), min_freq))
    }

    fn from_entries(entries: Vec<(String, u64)>) -> Vocab {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0u64; SPECIALS.len()];
        for (token, f) in entries {
            tokens.push(token);
            freqs.push(f);
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, freqs, ids }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    /// Encodes a token line: unknown tokens map to `<unk>` and a final
    /// `</s>` is appended. No `<s>` is prepended; the decoder input adds it.
    pub fn encode(&self, line: &str) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = parse_syllable_line(line)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect();
        ids.push(EOS);
        ids
    }

    /// Decodes ids to a token line, dropping all special ids.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let kept: Vec<&str> = ids
            .iter()
            .filter(|&&id| id >= SPECIALS.len() && id < self.tokens.len())
            .map(|&id| self.tokens[id].as_str())
            .collect();
        kept.join(" ")
    }

    /// Serializes the non-special rows as `token<TAB>frequency` in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for id in SPECIALS.len()..self.tokens.len() {
            out.push_str(&self.tokens[id]);
            out.push('\t');
            out.push_str(&self.freqs[id].to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Vocab, VocabError> {
        let mut entries = Vec::new();
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (token, freq) = line.split_once('\t').ok_or(VocabError::BadLine(idx + 1))?;
            let freq: u64 = freq.parse().map_err(|_| VocabError::BadLine(idx + 1))?;
            if SPECIALS.contains(&token) || seen.insert(token, ()).is_some() {
                return Err(VocabError::BadToken(token.to_string()));
            }
            entries.push((token.to_string(), freq));
        }
        Ok(Vocab::from_entries(entries))
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, VocabError> {
        Vocab::from_tsv(&fs::read_to_string(path)?)
    }
}
