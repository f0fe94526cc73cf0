//! Corpus-level BLEU with a single reference per candidate: clipped modified
//! n-gram precisions for n = 1..4 with uniform quarter weights, a brevity
//! penalty, no smoothing, reported on the 0-100 scale. Precision counts are
//! kept as exact integer rationals; only the final combination uses floats.

use std::collections::HashMap;

use num_rational::Ratio;
use thiserror::Error;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BleuError {
    #[error("no candidate line has at least {n} tokens; {n}-gram precision is undefined")]
    UndefinedDenominator { n: usize },
    #[error("candidate corpus has {cands} lines but reference corpus has {refs}")]
    LengthMismatch { cands: usize, refs: usize },
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
}

/// Full scoring breakdown for one candidate corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Clipped-match / candidate-count rationals for n = 1..4.
    pub precisions: [Ratio<u64>; MAX_ORDER],
    pub brevity_penalty: f64,
    /// 100 x BP x geometric mean of the four precisions; 0 when any
    /// precision is 0.
    pub bleu: f64,
    pub candidate_length: u64,
    pub reference_length: u64,
}

impl std::fmt::Display for BleuReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p: Vec<String> = self
            .precisions
            .iter()
            .map(|r| format!("{:.1}", 100.0 * ratio_f64(*r)))
            .collect();
        write!(
            f,
            "BLEU = {:.2}, p1/p2/p3/p4 = {}, BP = {:.3}, ratio = {:.3}",
            self.bleu,
            p.join("/"),
            self.brevity_penalty,
            self.candidate_length as f64 / self.reference_length as f64,
        )
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Clipped and total n-gram counts for one aligned line pair.
fn line_counts(cand: &[String], reference: &[String], n: usize) -> (u64, u64) {
    if cand.len() < n {
        return (0, 0);
    }
    let total = (cand.len() - n + 1) as u64;
    let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
    if reference.len() >= n {
        for gram in reference.windows(n) {
            *ref_counts.entry(gram).or_insert(0) += 1;
        }
    }
    let mut cand_counts: HashMap<&[String], u64> = HashMap::new();
    for gram in cand.windows(n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    let clipped = cand_counts
        .iter()
        .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (clipped, total)
}

/// Corpus-level modified n-gram precision: summed clipped matches over
/// summed candidate n-gram counts, each n-gram's matches capped at its
/// count in the line's reference.
pub fn modified_precision(
    cands: &[Vec<String>],
    refs: &[Vec<String>],
    n: usize,
) -> Result<Ratio<u64>, BleuError> {
    assert!((1..=MAX_ORDER).contains(&n), "n-gram order out of range");
    if cands.len() != refs.len() {
        return Err(BleuError::LengthMismatch { cands: cands.len(), refs: refs.len() });
    }
    if cands.is_empty() {
        return Err(BleuError::EmptyCorpus);
    }
    let mut matches = 0u64;
    let mut total = 0u64;
    for (cand, reference) in cands.iter().zip(refs) {
        let (m, t) = line_counts(cand, reference, n);
        matches += m;
        total += t;
    }
    if total == 0 {
        return Err(BleuError::UndefinedDenominator { n });
    }
    Ok(Ratio::new(matches, total))
}

/// 1 when the candidate corpus is longer than the reference, otherwise
/// exp(1 - r/c).
pub fn brevity_penalty(c: u64, r: u64) -> f64 {
    if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Scores a candidate corpus against an aligned single-reference corpus.
pub fn corpus_bleu(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<BleuReport, BleuError> {
    let mut precisions = [Ratio::from_integer(0); MAX_ORDER];
    for n in 1..=MAX_ORDER {
        precisions[n - 1] = modified_precision(cands, refs, n)?;
    }
    let c: u64 = cands.iter().map(|l| l.len() as u64).sum();
    let r: u64 = refs.iter().map(|l| l.len() as u64).sum();
    let bp = brevity_penalty(c, r);
    let bleu = if precisions.iter().any(|p| *p.numer() == 0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|&p| ratio_f64(p).ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * bp * log_mean.exp()
    };
    Ok(BleuReport {
        precisions,
        brevity_penalty: bp,
        bleu,
        candidate_length: c,
        reference_length: r,
    })
}

/// Tokenizes pre-tokenized corpus lines (space-delimited).
pub fn tokenize_lines<S: AsRef<str>>(lines: &[S]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| crate::segment::parse_syllable_line(l.as_ref()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(lines: &[&str]) -> Vec<Vec<String>> {
        tokenize_lines(lines)
    }

    #[test]
    fn clipping_caps_matches_at_reference_counts() {
        let cands = toks(&["the the the the the the the"]);
        let refs = toks(&["the cat is on the mat"]);
        assert_eq!(modified_precision(&cands, &refs, 1).unwrap(), Ratio::new(2, 7));
    }

    #[test]
    fn identical_corpora_have_unit_precisions_and_full_score() {
        let c = toks(&["a b c d e", "f g h i"]);
        for n in 1..=4 {
            assert_eq!(modified_precision(&c, &c, n).unwrap(), Ratio::from_integer(1));
        }
        let report = corpus_bleu(&c, &c).unwrap();
        assert_eq!(report.bleu, 100.0);
        assert_eq!(report.brevity_penalty, 1.0);
    }

    #[test]
    fn disjoint_tokens_score_zero() {
        let cands = toks(&["a b"]);
        let refs = toks(&["c d"]);
        assert_eq!(modified_precision(&cands, &refs, 1).unwrap(), Ratio::new(0, 2));
    }

    #[test]
    fn brevity_penalty_cases() {
        assert_eq!(brevity_penalty(5, 5), 1.0);
        assert_eq!(brevity_penalty(10, 5), 1.0);
        let bp = brevity_penalty(4, 5);
        assert!((bp - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-15);
        assert!((bp - 0.778801).abs() < 1e-6);
    }

    #[test]
    fn short_candidate_with_perfect_precisions() {
        let report = corpus_bleu(&toks(&["a b c d"]), &toks(&["a b c d e"])).unwrap();
        for p in report.precisions {
            assert_eq!(p, Ratio::from_integer(1));
        }
        assert!((report.bleu - 100.0 * (-0.25f64).exp()).abs() < 1e-9);
        assert!((report.bleu - 77.880078).abs() < 1e-3);
    }

    #[test]
    fn one_bad_four_gram_zeroes_the_score() {
        let report = corpus_bleu(&toks(&["a b c x"]), &toks(&["a b c d"])).unwrap();
        assert_eq!(report.precisions[3], Ratio::new(0, 1));
        assert_eq!(report.bleu, 0.0);
    }

    #[test]
    fn undefined_denominator_is_an_error() {
        let cands = toks(&["a b", "c"]);
        let refs = toks(&["a b", "c"]);
        assert_eq!(
            modified_precision(&cands, &refs, 4),
            Err(BleuError::UndefinedDenominator { n: 4 })
        );
        assert_eq!(
            corpus_bleu(&cands, &refs),
            Err(BleuError::UndefinedDenominator { n: 3 })
        );
    }

    #[test]
    fn misaligned_or_empty_corpora_are_errors() {
        assert_eq!(
            corpus_bleu(&toks(&["a"]), &toks(&["a", "b"])),
            Err(BleuError::LengthMismatch { cands: 1, refs: 2 })
        );
        assert_eq!(corpus_bleu(&[], &[]), Err(BleuError::EmptyCorpus));
    }

    #[test]
    fn line_order_does_not_matter() {
        let cands = toks(&["a b c d", "x y z w q", "a a b b c"]);
        let refs = toks(&["a b c d e", "x y w z q", "a b a b c"]);
        let fwd = corpus_bleu(&cands, &refs).unwrap();
        let mut rc: Vec<_> = cands.clone();
        let mut rr: Vec<_> = refs.clone();
        rc.reverse();
        rr.reverse();
        let rev = corpus_bleu(&rc, &rr).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn report_prints_the_standard_line() {
        let report = corpus_bleu(&toks(&["a b c d"]), &toks(&["a b c d e"])).unwrap();
        let line = report.to_string();
        assert!(line.starts_with("BLEU = 77.88, p1/p2/p3/p4 = 100.0/100.0/100.0/100.0, BP = 0.779"));
        assert!(line.ends_with("ratio = 0.800"));
    }

    #[test]
    fn empty_candidate_lines_are_tolerated() {
        let cands = toks(&["", "a b c d"]);
        let refs = toks(&["x", "a b c d"]);
        let report = corpus_bleu(&cands, &refs).unwrap();
        assert_eq!(report.precisions[0], Ratio::new(4, 4));
        assert_eq!(report.candidate_length, 4);
        assert_eq!(report.reference_length, 5);
    }
}
