//! Finite-difference verification of the joint objective's gradient, one
//! relative error per parameter group.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionForward;
use crate::data::features::RegionalFeatureStore;
use crate::data::reviews::Review;
use crate::error::{Error, Result};
use crate::gru::{context_preactivations, ReviewInputs};
use crate::numerics::{finite_diff_grad, relative_error};
use crate::params::{ModelDims, ModelParams, ParamGroup, Variant};
use crate::trainer::{joint_objective, ObjectiveInputs, ReviewIndex};
use crate::vecf::{LabeledPair, PairForward};

/// Shape of the default fixture.
pub const FIXTURE_DIMS: ModelDims = ModelDims {
    users: 3,
    items: 4,
    k: 4,
    d: 6,
    regions: 4,
    z: 3,
    vocab: 5,
    o: 2,
};

/// Pre-activations closer than this to a ReLU kink cause the draw to be redone.
const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 1000;

/// A random problem instance small enough for coordinate-wise differencing.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub params: ModelParams,
    pub features: RegionalFeatureStore,
    pub batch: Vec<LabeledPair>,
    pub reviews: Vec<Review>,
    pub end_token: usize,
    pub delta: f64,
    pub lambda: f64,
}

impl Fixture {
    /// Draws until no ReLU pre-activation lies within the kink margin.
    pub fn random(variant: Variant, dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.vocab < 3 || dims.items < 2 {
            return Err(Error::Config("fixture needs >= 3 vocabulary entries and >= 2 items".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_DRAWS {
            let fx = Self::draw(variant, dims, &mut rng)?;
            if fx.kink_margin() > KINK_MARGIN {
                return Ok(fx);
            }
        }
        Err(Error::Numerical(format!(
            "no kink-free fixture in {MAX_DRAWS} draws (seed {seed})"
        )))
    }

    fn draw(variant: Variant, dims: ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ModelParams::zeros(variant, dims);
        for t in params.tensors_mut() {
            for v in t.values.iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let features = RegionalFeatureStore::new(
            dims.items,
            dims.regions,
            dims.d,
            (0..dims.items * dims.regions * dims.d).map(|_| rng.gen::<f64>()).collect(),
        )?;
        // Vocabulary layout: words, then the end marker, then the unknown token.
        let end_token = dims.vocab.saturating_sub(2);
        let mut batch = Vec::new();
        let mut reviews = Vec::new();
        for u in 0..dims.users {
            let pos = rng.gen_range(0..dims.items);
            let neg = (pos + rng.gen_range(1..dims.items)) % dims.items;
            batch.push(LabeledPair { user: u, item: pos, label: true });
            batch.push(LabeledPair { user: u, item: neg, label: false });
            if variant.has_text() {
                let len = rng.gen_range(1..=4);
                let tokens = (0..len)
                    .map(|_| {
                        let t = rng.gen_range(0..dims.vocab - 1);
                        if t >= end_token {
                            t + 1
                        } else {
                            t
                        }
                    })
                    .collect();
                reviews.push(Review { user: u, item: pos, tokens });
            }
        }
        Ok(Self {
            params,
            features,
            batch,
            reviews,
            end_token,
            delta: rng.gen_range(0.2..0.8),
            lambda: 1e-2,
        })
    }

    /// Smallest |pre-activation| over every ReLU the objective evaluates.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        let v = &self.params.vecf;
        for ex in &self.batch {
            if self.params.variant.uses_images() {
                let fwd = AttentionForward::compute(
                    v.user_emb.row(ex.user),
                    self.features.item(ex.item),
                    &v.attention,
                );
                margin = fwd.pre.iter().fold(margin, |m, x| m.min(x.abs()));
            }
        }
        if let Some(text) = self.params.text() {
            for r in &self.reviews {
                let fwd = PairForward::compute(&self.params, Some(&self.features), r.user, r.item);
                let pres = context_preactivations(
                    &r.tokens,
                    ReviewInputs {
                        user: v.user_emb.row(r.user),
                        item: v.item_emb.row(r.item),
                        image: &fwd.image,
                    },
                    text,
                );
                margin = pres.iter().fold(margin, |m, x| m.min(x.abs()));
            }
        }
        margin
    }

    pub fn objective(&self, params: &ModelParams) -> Result<(f64, ModelParams)> {
        let index = ReviewIndex::new(&self.reviews);
        joint_objective(
            &self.batch,
            params,
            &ObjectiveInputs {
                features: Some(&self.features),
                reviews: &index,
                end_token: self.end_token,
                delta: self.delta,
                lambda: self.lambda,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub group: ParamGroup,
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Compares the analytic gradient with central differences. `fault` flips the
/// sign of one group's analytic gradient, to show that the check can fail.
pub fn check_fixture(fx: &Fixture, epsilon: f64, fault: Option<ParamGroup>) -> Result<Vec<GroupResult>> {
    let (_, grads) = fx.objective(&fx.params)?;
    let mut analytic = grads.flatten().into_vec();
    if let Some(g) = fault {
        for r in fx.params.group_ranges(g) {
            analytic[r].iter_mut().for_each(|v| *v = -*v);
        }
    }
    let flat = fx.params.flatten();
    let mut scratch = fx.params.clone();
    let numeric = finite_diff_grad(
        |x| {
            scratch.assign_flat(x.as_slice());
            fx.objective(&scratch).map(|(l, _)| l).unwrap_or(f64::NAN)
        },
        &flat,
        epsilon,
    )?;
    let numeric = numeric.as_slice();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(fx
        .params
        .groups_present()
        .into_iter()
        .map(|group| {
            let (mut a, mut n) = (Vec::new(), Vec::new());
            for r in fx.params.group_ranges(group) {
                a.extend_from_slice(&analytic[r.clone()]);
                n.extend_from_slice(&numeric[r]);
            }
            GroupResult {
                group,
                rel_error: relative_error(&a, &n, 1e-8),
                analytic_norm: norm(&a),
                numeric_norm: norm(&n),
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub variant: Variant,
    pub dims: ModelDims,
    pub seeds: u64,
    pub first_seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub fault: Option<ParamGroup>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            variant: Variant::ReVecf,
            dims: FIXTURE_DIMS,
            seeds: 50,
            first_seed: 0,
            epsilon: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: ParamGroup,
    pub worst_rel_error: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seeds: u64,
    pub tolerance: f64,
    pub groups: Vec<GroupSummary>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.failures == 0)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14} {:>12} {:>9}  status\n", "group", "worst_rel", "failures");
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:<14} {:>12.3e} {:>9}  {}",
                g.group.name(),
                g.worst_rel_error,
                g.failures,
                if g.failures == 0 { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut groups: Vec<GroupSummary> = Vec::new();
    for seed in opts.first_seed..opts.first_seed + opts.seeds {
        let fx = Fixture::random(opts.variant, opts.dims, seed)?;
        for r in check_fixture(&fx, opts.epsilon, opts.fault)? {
            let failed = !(r.rel_error < opts.tolerance);
            match groups.iter_mut().find(|g| g.group == r.group) {
                Some(g) => {
                    g.worst_rel_error = g.worst_rel_error.max(r.rel_error);
                    g.failures += usize::from(failed);
                }
                None => groups.push(GroupSummary {
                    group: r.group,
                    worst_rel_error: r.rel_error,
                    failures: usize::from(failed),
                }),
            }
        }
    }
    Ok(GradcheckReport {
        seeds: opts.seeds,
        tolerance: opts.tolerance,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_passes_every_group() {
        let fx = Fixture::random(Variant::ReVecf, FIXTURE_DIMS, 1).unwrap();
        let res = check_fixture(&fx, 1e-5, None).unwrap();
        assert_eq!(res.len(), ParamGroup::ALL.len());
        for r in res {
            assert!(r.rel_error < 1e-4, "{:?}", r);
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let fx = Fixture::random(Variant::ReVecf, FIXTURE_DIMS, 2).unwrap();
        let res = check_fixture(&fx, 1e-5, Some(ParamGroup::ContextGate)).unwrap();
        let gate = res.iter().find(|r| r.group == ParamGroup::ContextGate).unwrap();
        assert!(gate.rel_error > 1.0);
        assert!(res.iter().filter(|r| r.group != ParamGroup::ContextGate).all(|r| r.rel_error < 1e-4));
    }
}
