//! Rule-based syllable segmentation.
//!
//! A syllable is one base consonant plus everything attached to it: dependent
//! vowel signs, diacritics, and consonants glued on by script-specific
//! mechanics. Two glue mechanisms exist. A *stacker* (virama, coeng, phinthu)
//! written after a consonant pulls the next consonant into the same
//! syllable. A *coda killer* (asat, thanthakhat, cancellation mark) written
//! after a consonant marks it as the coda of presentation, so a consonant
//! followed by a killer joins the open syllable instead of starting a new
//! one; Myanmar additionally allows medial ha between coda and asat. Thai and
//! Lao preposed vowels attach forward to the next consonant.
//!
//! Segmentation is total: independent vowels, digits, and unclassified
//! characters become standalone one-character syllables, and combining marks
//! with no base to attach to become one-character residue syllables with a
//! recorded count. Spaces separate syllables and are dropped.

use crate::script::{profile, CharClass, ScriptId, ScriptProfile};

/// One segmented line of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedSentence {
    pub script: ScriptId,
    /// Non-empty syllables in input order; concatenating them reproduces
    /// the input with spaces removed.
    pub syllables: Vec<String>,
    /// Number of emitted syllables that lack a consonant base (dangling
    /// combining marks, unconsumed preposed vowels).
    pub residue_count: usize,
}

struct Segmenter<'a> {
    profile: &'a ScriptProfile,
    syllables: Vec<String>,
    current: String,
    current_has_consonant: bool,
    residue_count: usize,
}

impl Segmenter<'_> {
    fn flush(&mut self) {
        if self.current.is_empty() {
            return;
        }
        if !self.current_has_consonant {
            self.residue_count += 1;
        }
        self.syllables.push(std::mem::take(&mut self.current));
        self.current_has_consonant = false;
    }

    fn standalone(&mut self, ch: char, residue: bool) {
        self.flush();
        self.syllables.push(ch.to_string());
        if residue {
            self.residue_count += 1;
        }
    }

    /// True when `chars[idx..]` starts with optional coda medials followed
    /// by a coda killer, i.e. the consonant before `idx` is a coda.
    fn killer_follows(&self, chars: &[char], mut idx: usize) -> bool {
        while idx < chars.len() && self.profile.is_coda_medial(chars[idx]) {
            idx += 1;
        }
        idx < chars.len() && self.profile.is_coda_killer(chars[idx])
    }

    fn consonant(&mut self, ch: char, chars: &[char], next_idx: usize) {
        let glued = if self.current.is_empty() {
            false
        } else if !self.current_has_consonant {
            // Pending preposed vowel(s) waiting for their base.
            true
        } else {
            // Stacked onto the previous consonant, or a coda about to be
            // killed.
            self.current.chars().next_back().is_some_and(|prev| self.profile.is_stacker(prev))
                || self.killer_follows(chars, next_idx)
        };
        if !glued {
            self.flush();
        }
        self.current.push(ch);
        self.current_has_consonant = true;
    }
}

/// Splits `text` into syllables. Input is expected to be cleaner output but
/// any string is handled; see the module docs for the fallback rules.
pub fn segment(text: &str, script: ScriptId) -> SegmentedSentence {
    let p = profile(script);
    let chars: Vec<char> = text.chars().collect();
    let mut seg = Segmenter {
        profile: p,
        syllables: Vec::new(),
        current: String::new(),
        current_has_consonant: false,
        residue_count: 0,
    };
    for (i, &ch) in chars.iter().enumerate() {
        if ch == ' ' {
            seg.flush();
            continue;
        }
        match p.classify(ch) {
            CharClass::Consonant => seg.consonant(ch, &chars, i + 1),
            CharClass::DependentVowelSign if p.is_preposed_vowel(ch) => {
                // Attaches forward: opens a syllable unless one is already
                // waiting for its consonant.
                if seg.current_has_consonant {
                    seg.flush();
                }
                seg.current.push(ch);
            }
            CharClass::DependentVowelSign | CharClass::Diacritic => {
                if seg.current.is_empty() {
                    seg.standalone(ch, true);
                } else {
                    seg.current.push(ch);
                }
            }
            CharClass::IndependentVowel | CharClass::Digit | CharClass::Other => {
                seg.standalone(ch, false);
            }
        }
    }
    seg.flush();
    SegmentedSentence {
        script,
        syllables: seg.syllables,
        residue_count: seg.residue_count,
    }
}

impl SegmentedSentence {
    /// Rebuilds a sentence from already-segmented syllables (for example a
    /// parsed syllable line), recounting consonantless residues.
    pub fn from_syllables(script: ScriptId, syllables: Vec<String>) -> SegmentedSentence {
        let p = profile(script);
        // residues consist entirely of combining marks
        let residue_count = syllables
            .iter()
            .filter(|syl| {
                !syl.is_empty()
                    && syl.chars().all(|c| {
                        matches!(
                            p.classify(c),
                            CharClass::DependentVowelSign | CharClass::Diacritic
                        )
                    })
            })
            .count();
        SegmentedSentence { script, syllables, residue_count }
    }
}

/// Joins syllables with single spaces; inverse of [`parse_syllable_line`].
pub fn to_syllable_line(s: &SegmentedSentence) -> String {
    s.syllables.join(" ")
}

/// Splits a space-delimited line into tokens; empty line gives an empty list.
pub fn parse_syllable_line(line: &str) -> Vec<String> {
    line.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}
