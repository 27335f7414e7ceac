//! Feature files, dataset manifests and synthetic data.

mod feature_file;
mod manifest;
mod synthetic;

pub use feature_file::{decode_feature_file, encode_feature_file, read_feature_file, write_feature_file, FEATURE_VERSION, HEADER_LEN};
pub use manifest::{DatasetManifest, Split};
pub use synthetic::{collision_signature, generate_synthetic, SyntheticConfig};
