//! Syllable-level text restoration for Abugida scripts.
//!
//! The crate covers the full experimental loop: cleaning raw text down to a
//! core alphabet, segmenting it into orthographic syllables, corrupting the
//! syllable sequence in controlled ways (dropping vowels, dropping
//! consonants, deleting characters, masking whole syllables), and training a
//! small encoder-decoder transformer to reconstruct the original sequence.
//! BLEU scoring, corpus statistics, vocabulary handling, and a deterministic
//! end-to-end pipeline runner round out the toolkit.

pub mod bleu;
pub mod clean;
pub mod corrupt;
pub mod model;
pub mod pipeline;
pub mod script;
pub mod segment;
pub mod stats;
pub mod vocab;

pub use script::{classify_char, compose_syllable, profile, CharClass, ScriptId, ScriptProfile};
