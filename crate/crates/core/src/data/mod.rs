//! Dataset ingestion: interactions, reviews, vocabulary, regional features,
//! region labels, per-user splitting and the synthetic generator.

pub mod features;
pub mod interactions;
pub mod labels;
pub mod reviews;
pub mod split;
pub mod synth;
pub mod vocab;

pub use features::{RegionGrid, RegionalFeatureStore, VxrfHeader};
pub use interactions::{load_interactions, write_interactions, IdMap, Interaction, InteractionSet};
pub use labels::{load_region_labels, resolve_region_labels, write_region_labels, RawRegionLabel, RegionLabelSet};
pub use reviews::{encode_reviews, load_reviews, write_reviews, RawReview, Review};
pub use split::{split_per_user, SplitPlan};
pub use synth::{generate_synthetic, PlantedPreference, SynthConfig, SyntheticDataset};
pub use vocab::Vocabulary;
