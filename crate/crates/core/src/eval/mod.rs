//! Ranking metrics, ROUGE, region-explanation scores and the end-to-end
//! evaluation of a trained model.

pub mod ranking;
pub mod region;
pub mod rouge;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionForward;
use crate::data::features::RegionalFeatureStore;
use crate::data::labels::RegionLabelSet;
use crate::data::reviews::Review;
use crate::error::{Error, Result};
use crate::gru::{greedy_decode, ReviewInputs};
use crate::numerics::sigmoid;
use crate::params::ModelParams;
use crate::vecf::PairForward;

pub use ranking::{hit_ratio, ndcg, precision_recall_f1, random_baseline, F1Mode, Prf, RecommendationList};
pub use region::{coarse_cell, region_explanation_score, RegionScore};
pub use rouge::rouge_n;

/// Named metric values; serialized as a flat JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.values.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric map serializes")
    }
}

/// Top-n items for `user` among those not in `exclude` (sorted), ranked by
/// the logit; ties go to the lower item index.
pub fn recommend_for_user(
    params: &ModelParams,
    features: Option<&RegionalFeatureStore>,
    user: usize,
    exclude: &[usize],
    n: usize,
) -> RecommendationList {
    let mut scored: Vec<(usize, f64)> = (0..params.dims.items)
        .filter(|j| exclude.binary_search(j).is_err())
        .map(|j| (j, PairForward::compute(params, features, user, j).logit))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    RecommendationList {
        user,
        items: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| sigmoid(s.1)).collect(),
    }
}

/// Recommendations for several users, computed in parallel on the current
/// rayon pool. `exclude` is indexed by user.
pub fn recommend(
    params: &ModelParams,
    features: Option<&RegionalFeatureStore>,
    users: &[usize],
    exclude: &[Vec<usize>],
    n: usize,
) -> Vec<RecommendationList> {
    users
        .par_iter()
        .map(|&u| recommend_for_user(params, features, u, &exclude[u], n))
        .collect()
}

/// Everything an evaluation run needs besides the model.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub features: Option<&'a RegionalFeatureStore>,
    pub train: &'a [Vec<usize>],
    pub test: &'a [Vec<usize>],
    pub n: usize,
    pub f1_mode: F1Mode,
    /// Reviews of held-out pairs, used as ROUGE references.
    pub test_reviews: &'a [Review],
    pub end_token: usize,
    pub max_review_len: usize,
    pub labels: Option<&'a [RegionLabelSet]>,
}

/// Runs every metric that applies to the model's variant.
pub fn evaluate(params: &ModelParams, inputs: &EvalInputs<'_>) -> Result<MetricReport> {
    if params.variant.uses_images() && inputs.features.is_none() {
        return Err(Error::Config(format!("variant {} needs features to evaluate", params.variant)));
    }
    let mut report = MetricReport::default();
    let users: Vec<usize> = (0..inputs.test.len()).filter(|&u| !inputs.test[u].is_empty()).collect();
    let recs = recommend(params, inputs.features, &users, inputs.train, inputs.n);
    let n = inputs.n;
    let prf = precision_recall_f1(&recs, inputs.test, inputs.f1_mode)?;
    report.insert(format!("f1@{n}"), prf.f1);
    report.insert(format!("hr@{n}"), hit_ratio(&recs, inputs.test)?);
    report.insert(format!("ndcg@{n}"), ndcg(&recs, inputs.test, n)?);

    if let Some(text) = params.text() {
        let scores: Vec<(Prf, Prf, usize)> = inputs
            .test_reviews
            .par_iter()
            .filter(|r| !r.tokens.is_empty())
            .map(|r| {
                let fwd = PairForward::compute(params, inputs.features, r.user, r.item);
                let v = &params.vecf;
                let decoded = greedy_decode(
                    ReviewInputs {
                        user: v.user_emb.row(r.user),
                        item: v.item_emb.row(r.item),
                        image: &fwd.image,
                    },
                    text,
                    inputs.end_token,
                    inputs.max_review_len,
                );
                // Too-short decodes score zero; counted below instead of warning per pair.
                let score = |n: usize| {
                    if decoded.len() < n {
                        Prf::zero()
                    } else {
                        rouge_n(&decoded, &r.tokens, n)
                    }
                };
                (score(1), score(2), decoded.len())
            })
            .collect();
        for n in [1, 2] {
            let short = scores.iter().filter(|s| s.2 < n).count();
            if short > 0 {
                log::warn!("rouge-{n}: {short} of {} generated reviews shorter than {n} tokens", scores.len());
            }
        }
        if !scores.is_empty() {
            let count = scores.len() as f64;
            let orders: [(usize, Vec<Prf>); 2] = [
                (1, scores.iter().map(|s| s.0).collect()),
                (2, scores.iter().map(|s| s.1).collect()),
            ];
            for (order, prfs) in orders {
                let mean = |f: fn(&Prf) -> f64| prfs.iter().map(f).sum::<f64>() / count;
                report.insert(format!("rouge{order}_p"), mean(|p| p.precision));
                report.insert(format!("rouge{order}_r"), mean(|p| p.recall));
                report.insert(format!("rouge{order}_f1"), mean(|p| p.f1));
            }
        }
    }

    if let (Some(labels), Some(features)) = (inputs.labels, inputs.features) {
        if params.variant.uses_images() {
            let region = region_scores(params, features, labels)?;
            for (key, value) in region.values {
                report.values.insert(key, value);
            }
        }
    }
    Ok(report)
}

/// Mean region F1 and NDCG at k = 5 and 10 over the labeled pairs.
pub fn region_scores(
    params: &ModelParams,
    features: &RegionalFeatureStore,
    labels: &[RegionLabelSet],
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    if labels.is_empty() {
        return Ok(report);
    }
    let v = &params.vecf;
    let maps: Vec<Vec<f64>> = labels
        .par_iter()
        .map(|l| AttentionForward::compute(v.user_emb.row(l.user), features.item(l.item), &v.attention).alpha)
        .collect();
    for k in [5, 10] {
        let (mut f1, mut nd) = (0.0, 0.0);
        for (map, l) in maps.iter().zip(labels) {
            let s = region_explanation_score(map, l, k)?;
            f1 += s.f1;
            nd += s.ndcg;
        }
        let count = labels.len() as f64;
        report.insert(format!("region_f1@{k}"), f1 / count);
        report.insert(format!("region_ndcg@{k}"), nd / count);
    }
    Ok(report)
}
