//! Planted-preference synthetic data.
//!
//! Users and items are split into archetypes. Every archetype owns a set of
//! planted image regions and a feature pattern; an item of archetype `a`
//! carries pattern `a` in exactly those regions and low noise elsewhere. Users
//! mostly buy items of their own archetype (with a popularity skew inside the
//! archetype) and their reviews draw heavily on archetype-specific tokens.
//! Because the planted regions are known, the data doubles as an oracle for
//! both recommendation quality and attention placement.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{perfect_square_root, RegionalFeatureStore};
use super::interactions::{IdMap, Interaction, InteractionSet};
use super::reviews::RawReview;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    /// `h`; must be a perfect square.
    pub regions: usize,
    /// `D`.
    pub dim: usize,
    /// Number of distinct review words (reserved markers not included).
    pub vocab_size: usize,
    pub archetypes: usize,
    /// Planted regions per archetype; `None` means `h / 4` (at least 1).
    pub planted_regions: Option<usize>,
    pub items_per_user: usize,
    /// Probability that a purchase comes from the user's own archetype.
    pub match_prob: f64,
    /// Zipf exponent of the within-archetype popularity skew.
    pub popularity_exponent: f64,
    pub min_review_len: usize,
    pub max_review_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 30,
            items: 60,
            regions: 16,
            dim: 8,
            vocab_size: 24,
            archetypes: 2,
            planted_regions: None,
            items_per_user: 10,
            match_prob: 0.9,
            popularity_exponent: 1.0,
            min_review_len: 4,
            max_review_len: 8,
            seed: 7,
        }
    }
}

/// Planted ground truth for one positive pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedPreference {
    pub user: usize,
    pub item: usize,
    pub regions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub interactions: InteractionSet,
    pub reviews: Vec<RawReview>,
    pub features: RegionalFeatureStore,
    pub ground_truth: Vec<PlantedPreference>,
    pub user_archetype: Vec<usize>,
    pub item_archetype: Vec<usize>,
    /// Planted region indices per archetype, sorted.
    pub planted: Vec<Vec<usize>>,
}

const NOISE: f64 = 0.1;
const PATTERN: f64 = 1.0;
const ARCHETYPE_TOKEN_PROB: f64 = 0.7;

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset> {
    let c = config;
    if perfect_square_root(c.regions).is_none() {
        return Err(Error::Config(format!(
            "synthetic region count h={} is not a perfect square",
            c.regions
        )));
    }
    if c.users == 0 || c.items == 0 || c.dim == 0 || c.archetypes == 0 {
        return Err(Error::Config("synthetic sizes must be positive".into()));
    }
    if c.items < c.archetypes {
        return Err(Error::Config("need at least one item per archetype".into()));
    }
    if c.vocab_size < c.archetypes + 1 {
        return Err(Error::Config(
            "vocabulary must hold one token per archetype plus a generic token".into(),
        ));
    }
    if c.min_review_len == 0 || c.max_review_len < c.min_review_len {
        return Err(Error::Config("review length range is empty".into()));
    }
    if c.items_per_user == 0 || c.items_per_user >= c.items {
        return Err(Error::Config(
            "items_per_user must lie in [1, items)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let a_count = c.archetypes;
    let planted_count = c
        .planted_regions
        .unwrap_or(c.regions / 4)
        .clamp(1, c.regions);

    // Disjoint planted sets when they fit, independent draws otherwise.
    let mut all_regions: Vec<usize> = (0..c.regions).collect();
    all_regions.shuffle(&mut rng);
    let planted: Vec<Vec<usize>> = (0..a_count)
        .map(|a| {
            let mut set: Vec<usize> = if planted_count * a_count <= c.regions {
                all_regions[a * planted_count..(a + 1) * planted_count].to_vec()
            } else {
                let mut r: Vec<usize> = (0..c.regions).collect();
                r.shuffle(&mut rng);
                r.truncate(planted_count);
                r
            };
            set.sort_unstable();
            set
        })
        .collect();

    let user_archetype: Vec<usize> = (0..c.users).map(|u| u % a_count).collect();
    let item_archetype: Vec<usize> = (0..c.items).map(|j| j % a_count).collect();

    // Pattern dims of archetype a: d with d % A == a (or a % D when D < A).
    let pattern_dims = |a: usize| -> Vec<usize> {
        let dims: Vec<usize> = (0..c.dim).filter(|d| d % a_count == a).collect();
        if dims.is_empty() {
            vec![a % c.dim]
        } else {
            dims
        }
    };
    let mut values = Vec::with_capacity(c.items * c.regions * c.dim);
    for j in 0..c.items {
        let a = item_archetype[j];
        let dims = pattern_dims(a);
        for k in 0..c.regions {
            let planted_here = planted[a].binary_search(&k).is_ok();
            for d in 0..c.dim {
                let mut v = rng.gen::<f64>() * NOISE;
                if planted_here && dims.contains(&d) {
                    v += PATTERN;
                }
                // Stored as f32 on disk; keep the in-memory copy identical.
                values.push(f64::from(v as f32));
            }
        }
    }
    let features = RegionalFeatureStore::new(c.items, c.regions, c.dim, values)?;

    // Items per archetype ordered by popularity rank (index order).
    let pools: Vec<Vec<usize>> = (0..a_count)
        .map(|a| (0..c.items).filter(|&j| item_archetype[j] == a).collect())
        .collect();
    let weight = |rank: usize| 1.0 / ((rank + 1) as f64).powf(c.popularity_exponent);

    let mut positives = Vec::new();
    let mut ground_truth = Vec::new();
    let mut reviews = Vec::new();
    let users = IdMap::from_ids((0..c.users).map(|u| format!("u{u:03}")))?;
    let items = IdMap::from_ids((0..c.items).map(|j| format!("i{j:03}")))?;

    // Token layout: archetype a owns a contiguous block, the rest is generic.
    let block = (c.vocab_size / (a_count + 1)).max(1);
    let generic_start = block * a_count;
    let token = |i: usize| format!("w{i}");

    for u in 0..c.users {
        let a = user_archetype[u];
        let mut owned = vec![false; c.items];
        let mut picked = Vec::with_capacity(c.items_per_user);
        while picked.len() < c.items_per_user {
            let own = rng.gen::<f64>() < c.match_prob || a_count == 1;
            let candidates: Vec<(usize, f64)> = if own {
                pools[a]
                    .iter()
                    .enumerate()
                    .filter(|&(_, &j)| !owned[j])
                    .map(|(r, &j)| (j, weight(r)))
                    .collect()
            } else {
                (0..c.items)
                    .filter(|&j| item_archetype[j] != a && !owned[j])
                    .map(|j| (j, 1.0))
                    .collect()
            };
            let candidates = if candidates.is_empty() {
                (0..c.items)
                    .filter(|&j| !owned[j])
                    .map(|j| (j, 1.0))
                    .collect()
            } else {
                candidates
            };
            let total: f64 = candidates.iter().map(|(_, w)| w).sum();
            let mut x = rng.gen::<f64>() * total;
            let mut choice = candidates[candidates.len() - 1].0;
            for &(j, w) in &candidates {
                if x < w {
                    choice = j;
                    break;
                }
                x -= w;
            }
            owned[choice] = true;
            picked.push(choice);
        }
        for &j in &picked {
            positives.push(Interaction {
                user: u,
                item: j,
                timestamp: None,
            });
            let style = item_archetype[j];
            ground_truth.push(PlantedPreference {
                user: u,
                item: j,
                regions: planted[style].clone(),
            });
            let len = rng.gen_range(c.min_review_len..=c.max_review_len);
            let tokens = (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < ARCHETYPE_TOKEN_PROB {
                        token(style * block + rng.gen_range(0..block))
                    } else {
                        token(rng.gen_range(generic_start..c.vocab_size))
                    }
                })
                .collect();
            reviews.push(RawReview {
                user: users.id(u).to_owned(),
                item: items.id(j).to_owned(),
                tokens,
            });
        }
    }

    let interactions = InteractionSet::new(users, items, positives)?;
    Ok(SyntheticDataset {
        interactions,
        reviews,
        features,
        ground_truth,
        user_archetype,
        item_archetype,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract_on_default_config() {
        let cfg = SynthConfig {
            users: 30,
            items: 60,
            regions: 16,
            dim: 8,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.interactions.num_users(), 30);
        assert!(ds.interactions.user_items().iter().all(|v| !v.is_empty()));
        assert!(!ds.ground_truth.is_empty());
        assert_eq!(ds.features.num_items(), 60);
        assert_eq!(ds.features.regions(), 16);
        assert_eq!(ds.reviews.len(), ds.interactions.len());
    }

    #[test]
    fn seed_repeat_is_identical() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.interactions, b.interactions);
        assert_eq!(a.reviews, b.reviews);
        assert_eq!(a.features, b.features);
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn single_archetype_shares_planted_regions() {
        let cfg = SynthConfig {
            archetypes: 1,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let first = &ds.ground_truth[0].regions;
        assert!(ds.ground_truth.iter().all(|g| &g.regions == first));
    }

    #[test]
    fn non_square_grid_rejected() {
        let cfg = SynthConfig {
            regions: 15,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn planted_regions_carry_the_pattern() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        let item = 0;
        let a = ds.item_archetype[item];
        let grid = ds.features.item(item);
        let mass = |k: usize| grid.region(k).iter().sum::<f64>();
        for k in 0..grid.regions() {
            if ds.planted[a].contains(&k) {
                assert!(mass(k) >= 1.0);
            } else {
                assert!(mass(k) < NOISE * grid.dim() as f64);
            }
        }
    }
}
