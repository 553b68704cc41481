//! Top-n ranking metrics over per-user held-out positives.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// A user's ranked recommendations, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<usize>,
    /// Predicted probabilities, aligned with `items`.
    pub scores: Vec<f64>,
}

impl RecommendationList {
    pub fn new(user: usize, items: Vec<usize>) -> Self {
        let scores = vec![0.0; items.len()];
        Self { user, items, scores }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn zero() -> Self {
        Self {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }
}

/// Harmonic mean, zero when both inputs are zero.
pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// How F1 is aggregated across users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F1Mode {
    /// F1 of the user-averaged precision and recall.
    #[default]
    OfAverages,
    /// Mean of per-user F1 values.
    AverageOfUsers,
}

/// Users with at least one held-out item, paired with their list (empty if
/// the user got none).
fn evaluated<'a>(
    recs: &'a [RecommendationList],
    truth: &'a [Vec<usize>],
) -> Result<Vec<(&'a [usize], &'a [usize])>> {
    let by_user: HashMap<usize, &[usize]> = recs.iter().map(|r| (r.user, r.items.as_slice())).collect();
    let out: Vec<_> = truth
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(u, t)| (by_user.get(&u).copied().unwrap_or(&[][..]), t.as_slice()))
        .collect();
    if out.is_empty() {
        return Err(Error::Data("no user has held-out items".into()));
    }
    Ok(out)
}

fn hits(list: &[usize], truth: &[usize]) -> usize {
    list.iter().filter(|j| truth.contains(j)).count()
}

/// Precision over the list length, recall over the held-out count, averaged
/// across users with held-out items. `truth` is indexed by user.
pub fn precision_recall_f1(recs: &[RecommendationList], truth: &[Vec<usize>], mode: F1Mode) -> Result<Prf> {
    let users = evaluated(recs, truth)?;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for &(list, t) in &users {
        let h = hits(list, t) as f64;
        let p = if list.is_empty() { 0.0 } else { h / list.len() as f64 };
        let r = h / t.len() as f64;
        p_sum += p;
        r_sum += r;
        f_sum += harmonic(p, r);
    }
    let n = users.len() as f64;
    let (precision, recall) = (p_sum / n, r_sum / n);
    let f1 = match mode {
        F1Mode::OfAverages => harmonic(precision, recall),
        F1Mode::AverageOfUsers => f_sum / n,
    };
    Ok(Prf { precision, recall, f1 })
}

/// Fraction of users with at least one held-out item in their list.
pub fn hit_ratio(recs: &[RecommendationList], truth: &[Vec<usize>]) -> Result<f64> {
    let users = evaluated(recs, truth)?;
    let hit = users.iter().filter(|(l, t)| hits(l, t) > 0).count();
    Ok(hit as f64 / users.len() as f64)
}

/// Mean NDCG@n with binary gains; the ideal list packs min(n, |truth|) hits first.
pub fn ndcg(recs: &[RecommendationList], truth: &[Vec<usize>], n: usize) -> Result<f64> {
    let users = evaluated(recs, truth)?;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut total = 0.0;
    for &(list, t) in &users {
        let dcg: f64 = list
            .iter()
            .take(n)
            .enumerate()
            .filter(|(_, j)| t.contains(j))
            .map(|(i, _)| discount(i + 1))
            .sum();
        let ideal: f64 = (1..=n.min(t.len())).map(discount).sum();
        if ideal > 0.0 {
            total += dcg / ideal;
        }
    }
    Ok(total / users.len() as f64)
}

/// Expected precision, recall and F1 of a uniformly random list of length n
/// drawn from each user's candidates (items not in train).
pub fn random_baseline(train: &[Vec<usize>], test: &[Vec<usize>], num_items: usize, n: usize) -> Result<Prf> {
    let (mut p, mut r, mut users) = (0.0, 0.0, 0usize);
    for (tr, te) in train.iter().zip(test) {
        if te.is_empty() {
            continue;
        }
        let m = (num_items - tr.len()) as f64;
        let len = (n as f64).min(m);
        p += te.len() as f64 / m;
        r += len / m;
        users += 1;
    }
    if users == 0 {
        return Err(Error::Data("no user has held-out items".into()));
    }
    let (p, r) = (p / users as f64, r / users as f64);
    Ok(Prf {
        precision: p,
        recall: r,
        f1: harmonic(p, r),
    })
}
