//! The four corruption modes applied to segmented sentences: keep only
//! consonants, keep only vowel signs, delete one or two characters per
//! syllable, or mask k whole syllables with no two masked syllables
//! adjacent.
//!
//! All randomness flows through [`RandomSource`] so corpora are reproducible
//! from a seed and tests can script exact draws.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::script::{profile, CharClass};
use crate::segment::SegmentedSentence;

/// Replacement token for masked syllables. Reserved in vocabularies and not
/// a member of any script class.
pub const MASK_TOKEN: &str = "<mask>";

/// Source of random draws for corruption.
///
/// `next_index` is the only primitive; `next_subset` has a default
/// implementation on top of it, so a scripted test source controls both.
pub trait RandomSource {
    /// Uniform integer in `[0, bound)`. `bound` must be positive.
    fn next_index(&mut self, bound: usize) -> usize;

    /// Uniformly random sorted k-subset of `[0, n)`. With `non_adjacent`,
    /// the subset has pairwise gaps of at least two, sampled uniformly over
    /// all such subsets via the shift bijection: a k-subset {a_1<…<a_k} of
    /// [0, n-k] maps to {a_i + (i-1)}, which enumerates the non-adjacent
    /// k-subsets of [0, n) exactly once.
    fn next_subset(&mut self, n: usize, k: usize, non_adjacent: bool) -> Vec<usize> {
        let m = if non_adjacent { n - k + 1 } else { n };
        assert!(k <= m, "subset does not fit");
        // Partial Fisher-Yates over [0, m): the first k slots are a uniform
        // k-permutation, hence a uniform k-subset once sorted.
        let mut pool: Vec<usize> = (0..m).collect();
        for i in 0..k {
            let j = i + self.next_index(m - i);
            pool.swap(i, j);
        }
        let mut chosen: Vec<usize> = pool[..k].to_vec();
        chosen.sort_unstable();
        if non_adjacent {
            for (i, p) in chosen.iter_mut().enumerate() {
                *p += i;
            }
        }
        chosen
    }
}

/// Deterministic source backed by a counter-based generator. Independent
/// per-line substreams come from the stream parameter, so corrupting lines
/// in parallel yields the same corpus as corrupting them sequentially.
pub struct SeededSource {
    rng: ChaCha8Rng,
}

impl SeededSource {
    pub fn new(seed: u64) -> SeededSource {
        SeededSource { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Substream for one corpus line.
    pub fn for_line(seed: u64, line_index: u64) -> SeededSource {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(line_index);
        SeededSource { rng }
    }
}

impl RandomSource for SeededSource {
    fn next_index(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound)
    }
}

/// Test double that replays a fixed list of draws.
pub struct ScriptedSource {
    draws: std::vec::IntoIter<usize>,
}

impl ScriptedSource {
    pub fn new(draws: Vec<usize>) -> ScriptedSource {
        ScriptedSource { draws: draws.into_iter() }
    }
}

impl RandomSource for ScriptedSource {
    fn next_index(&mut self, bound: usize) -> usize {
        let v = self.draws.next().expect("scripted source ran out of draws");
        assert!(v < bound, "scripted draw {v} out of bound {bound}");
        v
    }
}

/// Which corruption to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Keep only the consonants of each syllable.
    ConsonantOnly,
    /// Keep only the dependent vowel signs of each syllable.
    VowelOnly,
    /// Delete `n` random characters from each syllable, leaving at least one.
    RandomDelete(u8),
    /// Mask `k` pairwise non-adjacent syllables.
    Mask(u8),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown corruption kind {0:?} (expected consonant, vowel, delete1, delete2, mask3, mask5, mask8, or mask10)")]
pub struct UnknownKind(pub String);

impl FromStr for CorruptionKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, UnknownKind> {
        match s {
            "consonant" => Ok(CorruptionKind::ConsonantOnly),
            "vowel" => Ok(CorruptionKind::VowelOnly),
            "delete1" => Ok(CorruptionKind::RandomDelete(1)),
            "delete2" => Ok(CorruptionKind::RandomDelete(2)),
            "mask3" => Ok(CorruptionKind::Mask(3)),
            "mask5" => Ok(CorruptionKind::Mask(5)),
            "mask8" => Ok(CorruptionKind::Mask(8)),
            "mask10" => Ok(CorruptionKind::Mask(10)),
            other => Err(UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorruptionKind::ConsonantOnly => write!(f, "consonant"),
            CorruptionKind::VowelOnly => write!(f, "vowel"),
            CorruptionKind::RandomDelete(n) => write!(f, "delete{n}"),
            CorruptionKind::Mask(k) => write!(f, "mask{k}"),
        }
    }
}

/// A corruption kind plus the seed that makes it reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub seed: u64,
}

/// Result of masking one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskOutcome {
    Masked {
        tokens: Vec<String>,
        /// Sorted, pairwise non-adjacent masked positions; length k.
        positions: Vec<usize>,
    },
    /// Sentence too short: fewer than 2k-1 syllables.
    Skipped { num_syllables: usize, k: usize },
}

/// Per syllable, the concatenation of its consonant characters; syllables
/// contributing nothing are dropped.
pub fn extract_consonants(s: &SegmentedSentence) -> Vec<String> {
    extract_class(s, CharClass::Consonant)
}

/// Per syllable, the concatenation of its dependent vowel signs; syllables
/// contributing nothing are dropped.
pub fn extract_vowels(s: &SegmentedSentence) -> Vec<String> {
    extract_class(s, CharClass::DependentVowelSign)
}

fn extract_class(s: &SegmentedSentence, class: CharClass) -> Vec<String> {
    let p = profile(s.script);
    s.syllables
        .iter()
        .map(|syl| syl.chars().filter(|&c| p.classify(c) == class).collect::<String>())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Deletes `min(n, len-1)` distinct characters from each syllable at
/// uniformly drawn positions; every syllable keeps at least one character
/// and the token count is preserved.
pub fn delete_random_chars(
    s: &SegmentedSentence,
    n: u8,
    rng: &mut dyn RandomSource,
) -> Vec<String> {
    s.syllables
        .iter()
        .map(|syl| {
            let chars: Vec<char> = syl.chars().collect();
            let drop = (n as usize).min(chars.len() - 1);
            let mut chosen: Vec<usize> = Vec::with_capacity(drop);
            while chosen.len() < drop {
                let pos = rng.next_index(chars.len());
                if !chosen.contains(&pos) {
                    chosen.push(pos);
                }
            }
            chars
                .iter()
                .enumerate()
                .filter(|(i, _)| !chosen.contains(i))
                .map(|(_, &c)| c)
                .collect()
        })
        .collect()
}

/// True iff `num_syllables` admits k pairwise non-adjacent positions,
/// i.e. `num_syllables >= 2k - 1`.
pub fn can_mask(num_syllables: usize, k: usize) -> bool {
    num_syllables + 1 >= 2 * k
}

/// Replaces a uniformly random non-adjacent k-subset of syllables with
/// [`MASK_TOKEN`], or skips the sentence when it is too short.
pub fn mask_syllables(
    s: &SegmentedSentence,
    k: usize,
    rng: &mut dyn RandomSource,
) -> MaskOutcome {
    let n = s.syllables.len();
    if !can_mask(n, k) {
        return MaskOutcome::Skipped { num_syllables: n, k };
    }
    let positions = rng.next_subset(n, k, true);
    let mut tokens = s.syllables.clone();
    for &p in &positions {
        tokens[p] = MASK_TOKEN.to_string();
    }
    MaskOutcome::Masked { tokens, positions }
}

/// Outcome of applying any corruption kind to one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorruptOutcome {
    Tokens(Vec<String>),
    Skipped { num_syllables: usize, k: usize },
}

/// Applies `kind` to one sentence. Only masking can skip.
pub fn corrupt(
    s: &SegmentedSentence,
    kind: CorruptionKind,
    rng: &mut dyn RandomSource,
) -> CorruptOutcome {
    match kind {
        CorruptionKind::ConsonantOnly => CorruptOutcome::Tokens(extract_consonants(s)),
        CorruptionKind::VowelOnly => CorruptOutcome::Tokens(extract_vowels(s)),
        CorruptionKind::RandomDelete(n) => {
            CorruptOutcome::Tokens(delete_random_chars(s, n, rng))
        }
        CorruptionKind::Mask(k) => match mask_syllables(s, k as usize, rng) {
            MaskOutcome::Masked { tokens, .. } => CorruptOutcome::Tokens(tokens),
            MaskOutcome::Skipped { num_syllables, k } => {
                CorruptOutcome::Skipped { num_syllables, k }
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::ScriptId;
    use crate::segment::segment;
    use proptest::prelude::*;

    fn sent(text: &str, script: ScriptId) -> SegmentedSentence {
        segment(text, script)
    }

    fn plain(script: ScriptId, syllables: &[&str]) -> SegmentedSentence {
        SegmentedSentence {
            script,
            syllables: syllables.iter().map(|s| s.to_string()).collect(),
            residue_count: 0,
        }
    }

    #[test]
    fn consonant_extraction_keeps_bases_only() {
        assert_eq!(extract_consonants(&sent("কাকি", ScriptId::Bengali)), ["ক", "ক"]);
        assert_eq!(
            extract_consonants(&plain(ScriptId::Bengali, &["ি"])),
            Vec::<String>::new()
        );
        assert_eq!(
            extract_consonants(&plain(ScriptId::Bengali, &[])),
            Vec::<String>::new()
        );
        // stacked pair contributes one two-consonant token
        assert_eq!(extract_consonants(&sent("ক্কা", ScriptId::Bengali)), ["কক"]);
    }

    #[test]
    fn vowel_extraction_keeps_signs_only() {
        assert_eq!(extract_vowels(&sent("কাকি", ScriptId::Bengali)), ["া", "ি"]);
        assert_eq!(extract_vowels(&sent("ক", ScriptId::Bengali)), Vec::<String>::new());
    }

    #[test]
    fn scripted_deletions_hit_the_drawn_positions() {
        let mut rng = ScriptedSource::new(vec![1]);
        assert_eq!(
            delete_random_chars(&plain(ScriptId::Bengali, &["কা"]), 1, &mut rng),
            ["ক"]
        );
        // single character: capped at zero deletions, no draw consumed
        let mut rng = ScriptedSource::new(vec![]);
        assert_eq!(
            delete_random_chars(&plain(ScriptId::Bengali, &["ক"]), 2, &mut rng),
            ["ক"]
        );
        let mut rng = ScriptedSource::new(vec![0, 2]);
        assert_eq!(
            delete_random_chars(&plain(ScriptId::Khmer, &["កាត"]), 2, &mut rng),
            ["ា"]
        );
        // repeated draw is rejected and redrawn
        let mut rng = ScriptedSource::new(vec![0, 0, 2]);
        assert_eq!(
            delete_random_chars(&plain(ScriptId::Khmer, &["កាត"]), 2, &mut rng),
            ["ា"]
        );
    }

    #[test]
    fn can_mask_threshold() {
        assert!(can_mask(5, 3));
        assert!(!can_mask(4, 3));
        assert!(can_mask(1, 1));
        assert!(can_mask(19, 10));
        assert!(!can_mask(18, 10));
    }

    #[test]
    fn forced_mask_layout_for_five_of_three() {
        let s = plain(ScriptId::Thai, &["a", "b", "c", "d", "e"]);
        let mut rng = SeededSource::new(7);
        match mask_syllables(&s, 3, &mut rng) {
            MaskOutcome::Masked { tokens, positions } => {
                assert_eq!(positions, [0, 2, 4]);
                assert_eq!(tokens, [MASK_TOKEN, "b", MASK_TOKEN, "d", MASK_TOKEN]);
            }
            MaskOutcome::Skipped { .. } => panic!("must mask"),
        }
    }

    #[test]
    fn short_sentences_are_skipped() {
        let s = plain(ScriptId::Thai, &["a", "b", "c", "d"]);
        let mut rng = SeededSource::new(7);
        assert_eq!(
            mask_syllables(&s, 3, &mut rng),
            MaskOutcome::Skipped { num_syllables: 4, k: 3 }
        );
    }

    #[test]
    fn seven_of_three_reaches_all_ten_subsets() {
        let s = plain(ScriptId::Thai, &["a", "b", "c", "d", "e", "f", "g"]);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..400u64 {
            let mut rng = SeededSource::new(seed);
            if let MaskOutcome::Masked { positions, .. } = mask_syllables(&s, 3, &mut rng) {
                seen.insert(positions);
            }
        }
        assert_eq!(seen.len(), 10);
        for p in &seen {
            assert!(p.windows(2).all(|w| w[1] - w[0] >= 2), "{p:?} adjacent");
        }
    }

    #[test]
    fn kind_strings_round_trip() {
        for s in ["consonant", "vowel", "delete1", "delete2", "mask3", "mask5", "mask8", "mask10"] {
            let kind: CorruptionKind = s.parse().unwrap();
            assert_eq!(kind.to_string(), s);
        }
        assert!("mask4".parse::<CorruptionKind>().is_err());
    }

    #[test]
    fn line_substreams_are_independent_of_order() {
        let s = plain(ScriptId::Thai, &["a", "b", "c", "d", "e", "f", "g", "h", "i"]);
        let mask = |line: u64| {
            let mut rng = SeededSource::for_line(99, line);
            mask_syllables(&s, 3, &mut rng)
        };
        let forward: Vec<_> = (0..8).map(mask).collect();
        let mut backward: Vec<_> = (0..8).rev().map(mask).collect();
        backward.reverse();
        assert_eq!(forward, backward);
        // different lines do not all share one outcome
        let distinct: std::collections::BTreeSet<_> = forward
            .iter()
            .map(|o| match o {
                MaskOutcome::Masked { positions, .. } => positions.clone(),
                MaskOutcome::Skipped { .. } => vec![],
            })
            .collect();
        assert!(distinct.len() > 1);
    }

    fn arb_syllables() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-z]{1,4}", 1..40)
    }

    proptest! {
        #[test]
        fn masked_positions_are_non_adjacent_and_sized(
            syllables in arb_syllables(),
            k in prop::sample::select(vec![3usize, 5, 8, 10]),
            seed in any::<u64>(),
        ) {
            let s = plain(ScriptId::Thai, &syllables.iter().map(String::as_str).collect::<Vec<_>>());
            let n = s.syllables.len();
            let mut rng = SeededSource::new(seed);
            match mask_syllables(&s, k, &mut rng) {
                MaskOutcome::Masked { tokens, positions } => {
                    prop_assert!(n >= 2 * k - 1);
                    prop_assert_eq!(positions.len(), k);
                    prop_assert!(positions.windows(2).all(|w| w[1] - w[0] >= 2));
                    prop_assert_eq!(tokens.len(), n);
                    for (i, t) in tokens.iter().enumerate() {
                        if positions.contains(&i) {
                            prop_assert_eq!(t.as_str(), MASK_TOKEN);
                        } else {
                            prop_assert_eq!(t.as_str(), syllables[i].as_str());
                        }
                    }
                }
                MaskOutcome::Skipped { .. } => prop_assert!(n < 2 * k - 1),
            }
        }

        #[test]
        fn deletion_conserves_tokens_and_floors_length(
            syllables in arb_syllables(),
            n in 1u8..=2,
            seed in any::<u64>(),
        ) {
            let s = plain(ScriptId::Thai, &syllables.iter().map(String::as_str).collect::<Vec<_>>());
            let mut rng = SeededSource::new(seed);
            let out = delete_random_chars(&s, n, &mut rng);
            prop_assert_eq!(out.len(), syllables.len());
            for (orig, got) in syllables.iter().zip(&out) {
                let before = orig.chars().count();
                let after = got.chars().count();
                prop_assert_eq!(after, before.saturating_sub(n as usize).max(1));
                // survivors keep their relative order
                let mut it = orig.chars();
                for c in got.chars() {
                    prop_assert!(it.any(|o| o == c));
                }
            }
        }

        #[test]
        fn subset_sampling_matches_the_bijection_domain(
            n in 1usize..60,
            seed in any::<u64>(),
        ) {
            let mut rng = SeededSource::new(seed);
            for k in [3usize, 5, 8, 10] {
                if n >= 2 * k - 1 {
                    let sub = rng.next_subset(n, k, true);
                    prop_assert_eq!(sub.len(), k);
                    prop_assert!(sub.iter().all(|&p| p < n));
                    prop_assert!(sub.windows(2).all(|w| w[1] - w[0] >= 2));
                }
            }
        }
    }
}
