//! Synthetic planted-preference setup shared by the training-based tests.

#![allow(dead_code)]

use vexrec::data::{
    encode_reviews, generate_synthetic, split_per_user, Review, SplitPlan, SynthConfig, SyntheticDataset, Vocabulary,
};
use vexrec::params::ModelDims;
use vexrec::trainer::{ReviewIndex, TrainConfig, TrainData};

pub struct Synth {
    pub ds: SyntheticDataset,
    pub split: SplitPlan,
    pub vocab: Vocabulary,
    /// All encoded reviews; `train_reviews` holds the train-split ones.
    pub reviews: Vec<Review>,
    pub train_reviews: ReviewIndex,
}

impl Synth {
    pub fn new(config: &SynthConfig, fraction: f64, split_seed: u64) -> Self {
        let ds = generate_synthetic(config).unwrap();
        let split = split_per_user(&ds.interactions, fraction, split_seed);
        let vocab = Vocabulary::build(ds.reviews.iter().map(|r| r.tokens.iter().map(String::as_str)), 1).unwrap();
        let (reviews, _) = encode_reviews(&ds.reviews, &ds.interactions, &vocab);
        let train: Vec<Review> = reviews.iter().filter(|r| split.is_train(r.user, r.item)).cloned().collect();
        let train_reviews = ReviewIndex::new(&train);
        Self {
            ds,
            split,
            vocab,
            reviews,
            train_reviews,
        }
    }

    /// The default synthetic dataset with a 70/30 split under seed 0.
    pub fn default_split() -> Self {
        Self::new(&SynthConfig::default(), 0.7, 0)
    }

    pub fn dims(&self, config: &TrainConfig) -> ModelDims {
        config.dims(
            self.ds.interactions.num_users(),
            self.ds.interactions.num_items(),
            self.ds.features.dim(),
            self.ds.features.regions(),
            self.vocab.size(),
        )
    }

    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.split.train,
            num_items: self.ds.interactions.num_items(),
            features: Some(&self.ds.features),
            reviews: &self.train_reviews,
            end_token: self.vocab.end_index(),
        }
    }
}

fn vxrf(magic: &[u8], version: u32, m: u32, h: u32, d: u32, payload_floats: usize) -> Vec<u8> {
    let mut out = magic.to_vec();
    for v in [version, m, h, d] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..payload_floats {
        out.extend_from_slice(&(i as f32 * 0.25).to_le_bytes());
    }
    out
}

/// A valid 2x4x3 feature file.
pub fn valid_vxrf() -> Vec<u8> {
    vxrf(b"VXRF", 1, 2, 4, 3, 24)
}

/// Eight feature files whose headers are wrong in distinct ways.
pub fn malformed_vxrf() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("truncated header", valid_vxrf()[..15].to_vec()),
        ("bad magic", vxrf(b"VXRG", 1, 2, 4, 3, 24)),
        ("unsupported version", vxrf(b"VXRF", 2, 2, 4, 3, 24)),
        ("zero items", vxrf(b"VXRF", 1, 0, 4, 3, 0)),
        ("zero regions", vxrf(b"VXRF", 1, 2, 0, 3, 0)),
        ("zero dim", vxrf(b"VXRF", 1, 2, 4, 0, 0)),
        ("payload shorter than declared", vxrf(b"VXRF", 1, 3, 4, 3, 24)),
        ("payload longer than declared", vxrf(b"VXRF", 1, 1, 4, 3, 24)),
    ]
}
