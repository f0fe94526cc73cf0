#!/usr/bin/env python3
"""Regenerates the per-script character class tables in crates/abugida/data/.

Classes are derived from the Unicode Character Database (names + general
categories) with a small, hand-audited exception list per script. Thai is
fully explicit because its character names do not distinguish consonants
from vowels. Run from the repository root:

    python3 tools/gen_script_tables.py
"""

import os
import sys
import unicodedata

CONSONANT = "Consonant"
DEP_VOWEL = "DependentVowelSign"
IND_VOWEL = "IndependentVowel"
DIACRITIC = "Diacritic"
DIGIT = "Digit"
OTHER = "Other"

# Vowel-letter names for scripts where independent vowels are spelled
# "<SCRIPT> LETTER <vowel>" rather than "INDEPENDENT VOWEL".
BENGALI_IND = {
    "A", "AA", "I", "II", "U", "UU", "VOCALIC R", "VOCALIC RR",
    "VOCALIC L", "VOCALIC LL", "E", "AI", "O", "AU",
}
DEVANAGARI_IND = BENGALI_IND | {
    "SHORT A", "CANDRA E", "SHORT E", "CANDRA O", "SHORT O",
    "CANDRA A", "OE", "OOE", "AW", "UE", "UUE",
}
MYANMAR_IND = {
    "A", "SHAN A", "I", "II", "U", "UU", "E", "MON E", "O", "AU",
    "VOCALIC R", "VOCALIC RR", "VOCALIC L", "VOCALIC LL",
}

# Explicit Thai table: consonants and vowels share the Lo category and the
# "THAI CHARACTER" name prefix, so ranges are listed outright.
THAI = {}
for cp in range(0x0E01, 0x0E2F):
    THAI[cp] = CONSONANT
THAI[0x0E24] = IND_VOWEL  # RU
THAI[0x0E26] = IND_VOWEL  # LU
for cp in list(range(0x0E30, 0x0E3A)) + list(range(0x0E40, 0x0E46)):
    THAI[cp] = DEP_VOWEL
THAI[0x0E47] = DEP_VOWEL  # MAITAIKHU shortens the vowel it follows
THAI[0x0E3A] = DIACRITIC  # PHINTHU (virama)
for cp in range(0x0E48, 0x0E4F):
    THAI[cp] = DIACRITIC  # tone marks, THANTHAKHAT, NIKHAHIT, YAMAKKAN
for cp in range(0x0E50, 0x0E5A):
    THAI[cp] = DIGIT
for cp in (0x0E2F, 0x0E3F, 0x0E46, 0x0E4F, 0x0E5A, 0x0E5B):
    THAI[cp] = OTHER

SCRIPTS = {
    "bengali": {
        "blocks": [(0x0980, 0x09FF)],
        "prefix": "BENGALI",
        "independent": BENGALI_IND,
        "exceptions": {
            0x09D7: DEP_VOWEL,  # AU LENGTH MARK completes a two-part vowel
            0x09FC: OTHER,      # LETTER VEDIC ANUSVARA, liturgical only
        },
    },
    "hindi": {
        "blocks": [(0x0900, 0x097F)],
        "prefix": "DEVANAGARI",
        "independent": DEVANAGARI_IND,
        "exceptions": {},
    },
    "khmer": {
        "blocks": [(0x1780, 0x17FF)],
        "prefix": "KHMER",
        "independent": set(),
        "exceptions": {
            0x17B4: OTHER,  # VOWEL INHERENT AQ, deprecated and invisible
            0x17B5: OTHER,  # VOWEL INHERENT AA, deprecated and invisible
            0x17DC: OTHER,  # AVAKRAHASANYA, avagraha-like symbol
        },
    },
    "lao": {
        "blocks": [(0x0E80, 0x0EFF)],
        "prefix": "LAO",
        "independent": set(),
        "exceptions": {
            0x0EBC: DIACRITIC,  # SEMIVOWEL SIGN LO, medial
            0x0EBD: DIACRITIC,  # SEMIVOWEL SIGN NYO, medial (category Lo)
            0x0EDC: CONSONANT,  # HO NO digraph
            0x0EDD: CONSONANT,  # HO MO digraph
        },
    },
    "myanmar": {
        "blocks": [(0x1000, 0x109F)],
        "prefix": "MYANMAR",
        "independent": MYANMAR_IND,
        "exceptions": {},
    },
    "thai": {
        "blocks": [(0x0E00, 0x0E7F)],
        "prefix": "THAI",
        "explicit": THAI,
    },
}


def classify(cp, spec):
    explicit = spec.get("explicit")
    if explicit is not None:
        return explicit.get(cp, OTHER)
    if cp in spec["exceptions"]:
        return spec["exceptions"][cp]
    ch = chr(cp)
    name = unicodedata.name(ch)
    cat = unicodedata.category(ch)
    prefix = spec["prefix"]
    if cat == "Nd":
        return DIGIT
    if "VOWEL SIGN" in name:
        return DEP_VOWEL
    if "INDEPENDENT VOWEL" in name:
        return IND_VOWEL
    letter_prefix = prefix + " LETTER "
    if name.startswith(letter_prefix):
        if name[len(letter_prefix):] in spec["independent"]:
            return IND_VOWEL
        return CONSONANT
    if cat in ("Mn", "Mc", "Me"):
        return DIACRITIC
    return OTHER


def main():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out_dir = os.path.join(root, "crates", "abugida", "data")
    os.makedirs(out_dir, exist_ok=True)
    for script, spec in sorted(SCRIPTS.items()):
        rows = []
        for lo, hi in spec["blocks"]:
            for cp in range(lo, hi + 1):
                try:
                    unicodedata.name(chr(cp))
                except ValueError:
                    continue  # unassigned
                rows.append((cp, classify(cp, spec)))
        path = os.path.join(out_dir, script + ".tsv")
        with open(path, "w", encoding="utf-8") as f:
            for cp, cls in rows:
                f.write("%04X\t%s\n" % (cp, cls))
        counts = {}
        for _, cls in rows:
            counts[cls] = counts.get(cls, 0) + 1
        print(script, counts)


if __name__ == "__main__":
    sys.exit(main())
