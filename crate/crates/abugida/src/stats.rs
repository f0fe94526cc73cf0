//! Corpus-level counting: sentence/syllable/consonant/vowel totals and the
//! bookkeeping around syllable masking (how many sentences were maskable,
//! how many syllables that masked in total).

use num_rational::Ratio;

use crate::corrupt::{mask_syllables, MaskOutcome, SeededSource};
use crate::script::{profile, CharClass};
use crate::segment::SegmentedSentence;

/// Size and composition of a segmented corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: u64,
    pub syllables: u64,
    /// Code points of class Consonant across all syllables.
    pub consonants: u64,
    /// Code points of class DependentVowelSign across all syllables.
    pub vowels: u64,
    /// Exact syllables-per-sentence ratio; zero for an empty corpus.
    pub avg_syllables_per_sentence: Ratio<u64>,
}

/// Outcome tallies for masking a corpus at one mask value.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskingStats {
    pub mask_value: usize,
    pub masked_sentences: u64,
    pub skipped_sentences: u64,
    /// 100 x skipped / total, rounded half-up to two decimals.
    pub skipped_pct: f64,
    /// Always mask_value x masked_sentences.
    pub total_syllables_masked: u64,
}

/// Counts sentences, syllables, and consonant/vowel code points.
pub fn corpus_stats(corpus: &[SegmentedSentence]) -> CorpusStats {
    let mut stats = CorpusStats {
        sentences: corpus.len() as u64,
        syllables: 0,
        consonants: 0,
        vowels: 0,
        avg_syllables_per_sentence: Ratio::from_integer(0),
    };
    for sent in corpus {
        let p = profile(sent.script);
        stats.syllables += sent.syllables.len() as u64;
        for syl in &sent.syllables {
            for ch in syl.chars() {
                match p.classify(ch) {
                    CharClass::Consonant => stats.consonants += 1,
                    CharClass::DependentVowelSign => stats.vowels += 1,
                    _ => {}
                }
            }
        }
    }
    if stats.sentences > 0 {
        stats.avg_syllables_per_sentence = Ratio::new(stats.syllables, stats.sentences);
    }
    stats
}

/// Rounds `100 * num / den` half-up to two decimals, in exact integer
/// arithmetic. Zero when `den` is zero.
fn pct_2dp(num: u64, den: u64) -> f64 {
    if den == 0 {
        return 0.0;
    }
    // half-up: floor(10000*num/den + 1/2)
    let hundredths = (20_000 * num + den) / (2 * den);
    hundredths as f64 / 100.0
}

/// Masks every sentence at mask value `k` (per-line substreams of `seed`)
/// and tallies the outcomes. Which sentences mask versus skip depends only
/// on their lengths, so the tallies are seed-invariant.
pub fn masking_stats(corpus: &[SegmentedSentence], k: usize, seed: u64) -> MaskingStats {
    let mut masked = 0u64;
    let mut skipped = 0u64;
    for (line, sent) in corpus.iter().enumerate() {
        let mut rng = SeededSource::for_line(seed, line as u64);
        match mask_syllables(sent, k, &mut rng) {
            MaskOutcome::Masked { .. } => masked += 1,
            MaskOutcome::Skipped { .. } => skipped += 1,
        }
    }
    MaskingStats {
        mask_value: k,
        masked_sentences: masked,
        skipped_sentences: skipped,
        skipped_pct: pct_2dp(skipped, masked + skipped),
        total_syllables_masked: k as u64 * masked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::ScriptId;
    use crate::segment::segment;

    fn corpus(lines: &[&str]) -> Vec<SegmentedSentence> {
        lines.iter().map(|l| segment(l, ScriptId::Bengali)).collect()
    }

    #[test]
    fn counts_code_points_by_class() {
        let s = corpus_stats(&corpus(&["কাকি"]));
        assert_eq!(s.sentences, 1);
        assert_eq!(s.syllables, 2);
        assert_eq!(s.consonants, 2);
        assert_eq!(s.vowels, 2);
        assert_eq!(s.avg_syllables_per_sentence, Ratio::new(2, 1));

        let s = corpus_stats(&corpus(&["ক"]));
        assert_eq!((s.syllables, s.consonants, s.vowels), (1, 1, 0));

        let s = corpus_stats(&[]);
        assert_eq!(s.sentences, 0);
        assert_eq!(s.avg_syllables_per_sentence, Ratio::from_integer(0));
    }

    #[test]
    fn diacritics_count_as_neither_consonant_nor_vowel() {
        // virama joins two consonants; only the consonants count
        let s = corpus_stats(&corpus(&["ক্কা"]));
        assert_eq!((s.syllables, s.consonants, s.vowels), (1, 2, 1));
    }

    #[test]
    fn stats_are_order_invariant() {
        let a = corpus(&["কাকি", "ক", "কু কু কু"]);
        let mut b = a.clone();
        b.reverse();
        let (sa, sb) = (corpus_stats(&a), corpus_stats(&b));
        assert_eq!(sa, sb);
    }

    #[test]
    fn masking_tallies_respect_the_skip_law() {
        // lengths 5 and 4: at k=3 the first masks, the second skips
        let c = corpus(&["ক ক ক ক ক", "ক ক ক ক"]);
        let m = masking_stats(&c, 3, 1234);
        assert_eq!(m.masked_sentences, 1);
        assert_eq!(m.skipped_sentences, 1);
        assert_eq!(m.total_syllables_masked, 3);
        assert_eq!(m.skipped_pct, 50.0);
        // tallies do not depend on the seed
        assert_eq!(masking_stats(&c, 3, 9999), m);
    }

    #[test]
    fn empty_corpus_masks_to_zeros() {
        let m = masking_stats(&[], 10, 1);
        assert_eq!(m.masked_sentences, 0);
        assert_eq!(m.skipped_sentences, 0);
        assert_eq!(m.total_syllables_masked, 0);
        assert_eq!(m.skipped_pct, 0.0);
    }

    #[test]
    fn percentage_rounds_half_up() {
        assert_eq!(pct_2dp(1, 20104), 0.0); // 0.004974% -> 0.00
        assert_eq!(pct_2dp(3, 20104), 0.01); // 0.014923% -> 0.01
        assert_eq!(pct_2dp(1, 8), 12.5); // exact
        assert_eq!(pct_2dp(1, 800), 0.13); // 0.125 -> half-up
        assert_eq!(pct_2dp(0, 5), 0.0);
    }
}
