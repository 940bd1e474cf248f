//! Dataset manifests, the stratified split, image preparation and batching.

pub mod batch;
pub mod image;
pub mod manifest;
pub mod synth;

pub use batch::{batch_iterator, load_split, shuffled_indices, Batch};
pub use image::decode_and_prepare;
pub use manifest::{
    class_name, stratified_split, DatasetManifest, SampleRecord, Split, SplitCounts, SplitRatios,
    COVID, NORMAL,
};
pub use synth::generate_synthetic;
