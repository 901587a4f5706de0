//! Dataset ingestion, pair construction and one-shot episodes.

mod dataset;
mod episode;
pub mod idx;
mod manifest;
mod pairs;
pub mod pgm;

pub use dataset::{LabeledDataset, Split};
pub use episode::{sample_episode, Episode, EpisodeSpec};
pub use idx::load_idx;
pub use manifest::{sha256_file, DataFormat, Manifest, ManifestCheck, Splits};
pub use pairs::{enumerate_pair_counts, pair_counts, sample_pairs, PairCounts, PairOptions};
pub use pgm::load_pgm_tree;
