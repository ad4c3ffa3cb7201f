//! Dataset manifests, label remapping, synthetic data, and the feature cache.

mod cache;
mod labels;
mod manifest;
mod synth;

pub use cache::{cache_features, extract_features, load_cached, CacheSummary, FeatureConfig};
pub use labels::{apply_label_map, LabelMap};
pub use manifest::{load_manifest, write_manifest, SampleManifest, SampleRecord};
pub use synth::{class_name, class_region, generate_synthetic, render_pair, Region, SynthSpec, Texture};
