//! Two-stage corpus cleaning.
//!
//! Stage one strips everything outside the script's Unicode block. Stage two
//! further strips independent vowels, digits, and in-block punctuation or
//! symbols, leaving only consonants, dependent vowel signs, diacritics, and
//! spaces. In both stages a removed run turns into a single space, runs of
//! whitespace collapse to one space, and the result is trimmed, so word
//! boundaries survive while nothing else does.

use crate::script::{profile, CharClass, ScriptId};

/// Which cleaning stages to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanStage {
    /// Block filtering only.
    First,
    /// Class filtering only; assumes stage-one output.
    Second,
    /// Both stages in order.
    Both,
}

fn clean_with(text: &str, keep: impl Fn(char) -> bool) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if keep(ch) {
            out.push(ch);
        } else if !out.ends_with(' ') && !out.is_empty() {
            out.push(' ');
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Stage one: keep characters of the script's block, replace every removed
/// run with one space, collapse whitespace, trim.
pub fn clean_first(text: &str, script: ScriptId) -> String {
    let p = profile(script);
    clean_with(text, |ch| p.in_block(ch))
}

/// Stage two: additionally drop independent vowels, digits, and in-block
/// characters with no class, with the same space semantics.
pub fn clean_second(text: &str, script: ScriptId) -> String {
    let p = profile(script);
    clean_with(text, |ch| {
        matches!(
            p.classify(ch),
            CharClass::Consonant | CharClass::DependentVowelSign | CharClass::Diacritic
        )
    })
}

/// Runs the selected stage(s).
pub fn clean(text: &str, script: ScriptId, stage: CleanStage) -> String {
    match stage {
        CleanStage::First => clean_first(text, script),
        CleanStage::Second => clean_second(text, script),
        CleanStage::Both => clean_second(&clean_first(text, script), script),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_stage_strips_foreign_runs_to_one_space() {
        assert_eq!(clean_first("ক1.5%খ", ScriptId::Bengali), "ক খ");
        assert_eq!(clean_first("abc ক  খ xyz", ScriptId::Bengali), "ক খ");
        assert_eq!(clean_first("hello", ScriptId::Bengali), "");
    }

    #[test]
    fn second_stage_drops_digits_and_independent_vowels() {
        // Bengali digit seven and independent vowel A survive stage one
        // but not stage two.
        assert_eq!(clean_second("ক৭খ", ScriptId::Bengali), "ক খ");
        assert_eq!(clean_second("অ কা", ScriptId::Bengali), "কা");
        // danda is in-block Other
        assert_eq!(clean_second("কা।খা", ScriptId::Bengali), "কা খা");
    }

    #[test]
    fn both_equals_composition() {
        let raw = "The অগ্নি 123 কৌশল। end";
        assert_eq!(
            clean(raw, ScriptId::Bengali, CleanStage::Both),
            clean_second(&clean_first(raw, ScriptId::Bengali), ScriptId::Bengali)
        );
    }

    #[test]
    fn empty_and_all_foreign_inputs_clean_to_empty() {
        for text in ["", "   ", "abc 123 !?"] {
            assert_eq!(clean(text, ScriptId::Thai, CleanStage::Both), "");
        }
    }

    fn arb_script() -> impl Strategy<Value = ScriptId> {
        prop::sample::select(ScriptId::ALL.to_vec())
    }

    /// Mix of in-block and foreign characters for a script.
    fn arb_text(script: ScriptId) -> impl Strategy<Value = String> {
        let p = profile(script);
        let (lo, hi) = p.blocks()[0];
        let in_block = (lo..=hi).filter_map(char::from_u32).collect::<Vec<_>>();
        let pool = prop::strategy::Union::new(vec![
            prop::sample::select(in_block).boxed(),
            prop::char::any().boxed(),
        ]);
        prop::collection::vec(pool, 0..60).prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent((script, text) in arb_script().prop_flat_map(|s| (Just(s), arb_text(s)))) {
            let once = clean(&text, script, CleanStage::Both);
            prop_assert_eq!(clean(&once, script, CleanStage::Both), once.clone());
            let first = clean_first(&text, script);
            prop_assert_eq!(clean_first(&first, script), first.clone());
            prop_assert_eq!(clean_second(&once, script), once);
        }

        #[test]
        fn cleaned_alphabet_is_core_plus_space((script, text) in arb_script().prop_flat_map(|s| (Just(s), arb_text(s)))) {
            let out = clean(&text, script, CleanStage::Both);
            let p = profile(script);
            for ch in out.chars() {
                prop_assert!(
                    ch == ' '
                        || matches!(
                            p.classify(ch),
                            CharClass::Consonant | CharClass::DependentVowelSign | CharClass::Diacritic
                        ),
                    "unexpected char U+{:04X}", ch as u32
                );
            }
            prop_assert!(!out.starts_with(' ') && !out.ends_with(' '));
            prop_assert!(!out.contains("  "));
        }

        #[test]
        fn cleaning_never_grows_text((script, text) in arb_script().prop_flat_map(|s| (Just(s), arb_text(s)))) {
            let out = clean(&text, script, CleanStage::Both);
            prop_assert!(out.chars().count() <= text.chars().count());
        }

        #[test]
        fn kept_characters_preserve_relative_order((script, text) in arb_script().prop_flat_map(|s| (Just(s), arb_text(s)))) {
            let out = clean(&text, script, CleanStage::Both);
            let kept: Vec<char> = out.chars().filter(|&c| c != ' ').collect();
            let mut it = text.chars();
            for ch in kept {
                prop_assert!(it.any(|c| c == ch), "cleaned output reorders characters");
            }
        }
    }
}
