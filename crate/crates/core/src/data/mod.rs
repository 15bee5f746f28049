//! Datasets and client partitioning.

pub mod idx;
pub mod partition;
pub mod synthetic;

mod dataset;

pub use dataset::Dataset;
pub use idx::load_idx;
pub use partition::{partition, ClientShard, PartitionManifest, PartitionScheme, PartitionSpec};
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};
