//! Character classification for the six supported Abugida scripts.
//!
//! Each script ships with a static table assigning every assigned code point
//! of its Unicode block to one of six classes. The tables live in
//! `data/<script>.tsv` (one `<hex codepoint><TAB><class>` line, sorted by
//! code point) and are embedded into the binary; [`ScriptProfile::parse_tsv`]
//! accepts the same format from external files.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

/// One of the six supported scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptId {
    Bengali,
    Hindi,
    Khmer,
    Lao,
    Myanmar,
    Thai,
}

impl ScriptId {
    pub const ALL: [ScriptId; 6] = [
        ScriptId::Bengali,
        ScriptId::Hindi,
        ScriptId::Khmer,
        ScriptId::Lao,
        ScriptId::Myanmar,
        ScriptId::Thai,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptId::Bengali => "bengali",
            ScriptId::Hindi => "hindi",
            ScriptId::Khmer => "khmer",
            ScriptId::Lao => "lao",
            ScriptId::Myanmar => "myanmar",
            ScriptId::Thai => "thai",
        }
    }
}

impl fmt::Display for ScriptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown script {0:?} (expected one of bengali/bn/bg, hindi/hi, khmer/km/kh, lao/lo, myanmar/my, thai/th)")]
pub struct UnknownScript(pub String);

impl FromStr for ScriptId {
    type Err = UnknownScript;

    /// Accepts full names plus the two-letter codes in circulation for these
    /// languages (`bn`/`bg`, `hi`, `km`/`kh`, `lo`, `my`, `th`).
    fn from_str(s: &str) -> Result<Self, UnknownScript> {
        match s.to_ascii_lowercase().as_str() {
            "bengali" | "bn" | "bg" => Ok(ScriptId::Bengali),
            "hindi" | "hi" => Ok(ScriptId::Hindi),
            "khmer" | "km" | "kh" => Ok(ScriptId::Khmer),
            "lao" | "lo" => Ok(ScriptId::Lao),
            "myanmar" | "my" => Ok(ScriptId::Myanmar),
            "thai" | "th" => Ok(ScriptId::Thai),
            other => Err(UnknownScript(other.to_string())),
        }
    }
}

/// Class of a code point within a given script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharClass {
    Consonant,
    DependentVowelSign,
    IndependentVowel,
    Diacritic,
    Digit,
    /// Anything else: out-of-block characters, in-block punctuation,
    /// symbols, currency marks, and unassigned code points.
    Other,
}

impl CharClass {
    pub fn name(self) -> &'static str {
        match self {
            CharClass::Consonant => "Consonant",
            CharClass::DependentVowelSign => "DependentVowelSign",
            CharClass::IndependentVowel => "IndependentVowel",
            CharClass::Diacritic => "Diacritic",
            CharClass::Digit => "Digit",
            CharClass::Other => "Other",
        }
    }
}

impl FromStr for CharClass {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, ProfileError> {
        match s {
            "Consonant" => Ok(CharClass::Consonant),
            "DependentVowelSign" => Ok(CharClass::DependentVowelSign),
            "IndependentVowel" => Ok(CharClass::IndependentVowel),
            "Diacritic" => Ok(CharClass::Diacritic),
            "Digit" => Ok(CharClass::Digit),
            "Other" => Ok(CharClass::Other),
            other => Err(ProfileError::BadClass(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("line {0}: expected `<hex codepoint>\\t<class>`")]
    BadLine(usize),
    #[error("invalid code point {0:?}")]
    BadCodePoint(String),
    #[error("unknown character class {0:?}")]
    BadClass(String),
    #[error("code point U+{0:04X} lies outside the {1} block")]
    OutOfBlock(u32, ScriptId),
}

/// Raised by [`compose_syllable`] when an argument has the wrong class.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComposeError {
    #[error("U+{cp:04X} is {found} in {script}, expected a Consonant base")]
    BadBase { cp: u32, found: &'static str, script: ScriptId },
    #[error("U+{cp:04X} is {found} in {script}, expected a DependentVowelSign")]
    BadVowelSign { cp: u32, found: &'static str, script: ScriptId },
}

/// Static classification data for one script.
#[derive(Debug, Clone)]
pub struct ScriptProfile {
    script: ScriptId,
    blocks: Vec<(u32, u32)>,
    consonants: BTreeSet<char>,
    dependent_vowels: BTreeSet<char>,
    independent_vowels: BTreeSet<char>,
    diacritics: BTreeSet<char>,
    digits: BTreeSet<char>,
    /// Segmentation glue: diacritics that bind the *following* consonant
    /// into the current syllable (virama, coeng).
    stackers: BTreeSet<char>,
    /// Segmentation glue: killers that bind the consonant they *follow*
    /// into the previous syllable as a coda (asat, thanthakhat).
    coda_killers: BTreeSet<char>,
    /// Medial signs allowed between a coda consonant and its killer.
    coda_medials: BTreeSet<char>,
    /// Vowel signs written before the consonant they belong to.
    preposed_vowels: BTreeSet<char>,
}

const DATA: [(ScriptId, &str); 6] = [
    (ScriptId::Bengali, include_str!("../data/bengali.tsv")),
    (ScriptId::Hindi, include_str!("../data/hindi.tsv")),
    (ScriptId::Khmer, include_str!("../data/khmer.tsv")),
    (ScriptId::Lao, include_str!("../data/lao.tsv")),
    (ScriptId::Myanmar, include_str!("../data/myanmar.tsv")),
    (ScriptId::Thai, include_str!("../data/thai.tsv")),
];

/// Unicode block(s) backing each script. Only Bengali, Devanagari, Khmer,
/// Lao, Myanmar, and Thai core blocks are considered; supplements and
/// extended blocks are out of scope.
fn blocks_for(script: ScriptId) -> Vec<(u32, u32)> {
    match script {
        ScriptId::Bengali => vec![(0x0980, 0x09FF)],
        ScriptId::Hindi => vec![(0x0900, 0x097F)],
        ScriptId::Khmer => vec![(0x1780, 0x17FF)],
        ScriptId::Lao => vec![(0x0E80, 0x0EFF)],
        ScriptId::Myanmar => vec![(0x1000, 0x109F)],
        ScriptId::Thai => vec![(0x0E00, 0x0E7F)],
    }
}

/// Per-script segmentation glue characters. See [`crate::segment`].
fn glue_for(script: ScriptId) -> (Vec<char>, Vec<char>, Vec<char>, Vec<char>) {
    // (stackers, coda_killers, coda_medials, preposed_vowels)
    match script {
        ScriptId::Bengali => (vec!['\u{09CD}'], vec![], vec![], vec![]),
        ScriptId::Hindi => (vec!['\u{094D}'], vec![], vec![], vec![]),
        ScriptId::Khmer => (vec!['\u{17D2}'], vec![], vec![], vec![]),
        // Phinthu stacks Pali consonants; thanthakhat silences a coda.
        ScriptId::Thai => (
            vec!['\u{0E3A}'],
            vec!['\u{0E4C}'],
            vec![],
            ('\u{0E40}'..='\u{0E44}').collect(),
        ),
        ScriptId::Lao => (
            vec!['\u{0EBA}'],
            vec!['\u{0ECC}'],
            vec![],
            ('\u{0EC0}'..='\u{0EC4}').collect(),
        ),
        // Virama stacks; asat marks a coda, optionally after medial ha.
        ScriptId::Myanmar => (
            vec!['\u{1039}'],
            vec!['\u{103A}'],
            vec!['\u{103E}'],
            vec![],
        ),
    }
}

impl ScriptProfile {
    /// Parses the `<hex codepoint><TAB><class>` table format.
    pub fn parse_tsv(script: ScriptId, tsv: &str) -> Result<ScriptProfile, ProfileError> {
        let blocks = blocks_for(script);
        let mut profile = ScriptProfile {
            script,
            blocks: blocks.clone(),
            consonants: BTreeSet::new(),
            dependent_vowels: BTreeSet::new(),
            independent_vowels: BTreeSet::new(),
            diacritics: BTreeSet::new(),
            digits: BTreeSet::new(),
            stackers: BTreeSet::new(),
            coda_killers: BTreeSet::new(),
            coda_medials: BTreeSet::new(),
            preposed_vowels: BTreeSet::new(),
        };
        for (idx, line) in tsv.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (hex, class) = line.split_once('\t').ok_or(ProfileError::BadLine(idx + 1))?;
            let cp = u32::from_str_radix(hex, 16)
                .map_err(|_| ProfileError::BadCodePoint(hex.to_string()))?;
            let ch = char::from_u32(cp).ok_or_else(|| ProfileError::BadCodePoint(hex.to_string()))?;
            if !blocks.iter().any(|&(lo, hi)| (lo..=hi).contains(&cp)) {
                return Err(ProfileError::OutOfBlock(cp, script));
            }
            match class.parse::<CharClass>()? {
                CharClass::Consonant => profile.consonants.insert(ch),
                CharClass::DependentVowelSign => profile.dependent_vowels.insert(ch),
                CharClass::IndependentVowel => profile.independent_vowels.insert(ch),
                CharClass::Diacritic => profile.diacritics.insert(ch),
                CharClass::Digit => profile.digits.insert(ch),
                CharClass::Other => continue,
            };
        }
        let (stackers, codas, medials, preposed) = glue_for(script);
        profile.stackers = stackers.into_iter().collect();
        profile.coda_killers = codas.into_iter().collect();
        profile.coda_medials = medials.into_iter().collect();
        profile.preposed_vowels = preposed.into_iter().collect();
        Ok(profile)
    }

    pub fn script(&self) -> ScriptId {
        self.script
    }

    pub fn blocks(&self) -> &[(u32, u32)] {
        &self.blocks
    }

    pub fn in_block(&self, ch: char) -> bool {
        let cp = ch as u32;
        self.blocks.iter().any(|&(lo, hi)| (lo..=hi).contains(&cp))
    }

    pub fn consonants(&self) -> &BTreeSet<char> {
        &self.consonants
    }

    pub fn dependent_vowels(&self) -> &BTreeSet<char> {
        &self.dependent_vowels
    }

    pub fn independent_vowels(&self) -> &BTreeSet<char> {
        &self.independent_vowels
    }

    pub fn diacritics(&self) -> &BTreeSet<char> {
        &self.diacritics
    }

    pub fn digits(&self) -> &BTreeSet<char> {
        &self.digits
    }

    pub fn classify(&self, ch: char) -> CharClass {
        if !self.in_block(ch) {
            return CharClass::Other;
        }
        if self.consonants.contains(&ch) {
            CharClass::Consonant
        } else if self.dependent_vowels.contains(&ch) {
            CharClass::DependentVowelSign
        } else if self.diacritics.contains(&ch) {
            CharClass::Diacritic
        } else if self.independent_vowels.contains(&ch) {
            CharClass::IndependentVowel
        } else if self.digits.contains(&ch) {
            CharClass::Digit
        } else {
            CharClass::Other
        }
    }

    pub(crate) fn is_stacker(&self, ch: char) -> bool {
        self.stackers.contains(&ch)
    }

    pub(crate) fn is_coda_killer(&self, ch: char) -> bool {
        self.coda_killers.contains(&ch)
    }

    pub(crate) fn is_coda_medial(&self, ch: char) -> bool {
        self.coda_medials.contains(&ch)
    }

    pub(crate) fn is_preposed_vowel(&self, ch: char) -> bool {
        self.preposed_vowels.contains(&ch)
    }
}

/// Returns the static profile for `script`. Profiles are parsed once from
/// the embedded tables and shared; repeated calls return identical data.
pub fn profile(script: ScriptId) -> &'static ScriptProfile {
    static PROFILES: OnceLock<Vec<ScriptProfile>> = OnceLock::new();
    let all = PROFILES.get_or_init(|| {
        DATA.iter()
            .map(|&(id, tsv)| {
                ScriptProfile::parse_tsv(id, tsv).expect("embedded script table is well-formed")
            })
            .collect()
    });
    let idx = ScriptId::ALL.iter().position(|&s| s == script).unwrap();
    &all[idx]
}

/// Classifies a code point relative to a script. Total: code points outside
/// the script's blocks map to [`CharClass::Other`].
pub fn classify_char(ch: char, script: ScriptId) -> CharClass {
    profile(script).classify(ch)
}

/// Builds a syllable from a base consonant and an optional dependent vowel
/// sign, in composed order. A bare consonant carries its inherent vowel.
pub fn compose_syllable(
    base: char,
    vowel_sign: Option<char>,
    script: ScriptId,
) -> Result<String, ComposeError> {
    let p = profile(script);
    if p.classify(base) != CharClass::Consonant {
        return Err(ComposeError::BadBase {
            cp: base as u32,
            found: p.classify(base).name(),
            script,
        });
    }
    let mut out = String::new();
    out.push(base);
    if let Some(sign) = vowel_sign {
        if p.classify(sign) != CharClass::DependentVowelSign {
            return Err(ComposeError::BadVowelSign {
                cp: sign as u32,
                found: p.classify(sign).name(),
                script,
            });
        }
        out.push(sign);
    }
    Ok(out)
}
