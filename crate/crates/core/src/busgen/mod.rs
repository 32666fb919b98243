//! Procedural two-class lesion images and the three-client federation built
//! from them.

pub mod federation;
pub mod lesion;
pub mod shard;

pub use federation::{
    build_federation, client_counts, generate_shard, sample_spec, scaled_count, ClientProfile,
    DatasetManifest, CLIENT_COUNT, PROFILES, TABLE_COUNTS,
};
pub use lesion::{generate_image, Class, LesionSpec, IMAGE_SIDE};
pub use shard::{split_counts, split_shard, ClientShard, SplitTag, MIN_CLASS_COUNT};
