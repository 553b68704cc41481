//! ROUGE-n over n-gram sets: repeated n-grams count once.

use std::collections::HashSet;
use std::hash::Hash;

use super::ranking::{harmonic, Prf};

fn ngram_set<T: Eq + Hash>(tokens: &[T], n: usize) -> HashSet<&[T]> {
    tokens.windows(n).collect()
}

/// Overlap of the n-gram sets of `predicted` and `reference`. A sequence
/// shorter than n scores zero and logs a warning.
pub fn rouge_n<T: Eq + Hash>(predicted: &[T], reference: &[T], n: usize) -> Prf {
    assert!(n >= 1, "rouge order must be >= 1");
    if predicted.len() < n || reference.len() < n {
        log::warn!(
            "rouge-{n}: sequence shorter than n (predicted {}, reference {} tokens)",
            predicted.len(),
            reference.len()
        );
        return Prf::zero();
    }
    let pred = ngram_set(predicted, n);
    let gold = ngram_set(reference, n);
    let common = pred.intersection(&gold).count() as f64;
    let precision = common / pred.len() as f64;
    let recall = common / gold.len() as f64;
    Prf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn examples() {
        let a = toks("a b c");
        let r = rouge_n(&a, &a, 1);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = rouge_n(&a, &toks("a b d"), 2);
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        assert_eq!(rouge_n(&a, &toks("x y z"), 1), Prf::zero());
    }

    #[test]
    fn sets_collapse_duplicates() {
        let r = rouge_n(&toks("a a a"), &toks("a b"), 1);
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
    }

    #[test]
    fn short_sequence_scores_zero() {
        assert_eq!(rouge_n(&toks("a"), &toks("a b"), 2), Prf::zero());
    }
}
