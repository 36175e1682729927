//! Volume ingestion, preprocessing, manifests and synthetic data.

mod manifest;
mod preprocess;
mod synth;
mod volume;

pub use manifest::{split_counts, stratified_split, Manifest, ManifestEntry, Split};
pub use preprocess::{normalize_intensity, resize};
pub use synth::{synth_dataset, SYNTH_NOISE};
pub use volume::{decode_hvol, encode_hvol, Volume, HVOL_MAGIC, HVOL_VERSION};
