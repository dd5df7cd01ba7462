//! Manifests, labeled-subset selection, paired augmentation, batching and the
//! synthetic corpus.

pub mod augment;
pub mod batch;
pub mod manifest;
pub mod split;
pub mod synth;
pub mod tiles;

pub use augment::{
    augment_stain_pair, augment_views, eval_stain_pair, eval_views, AugmentDraw, AugmentationPolicy,
    ChannelStats, Standardization, View,
};
pub use batch::{make_batches, Batch, BatchPlan};
pub use manifest::{load_manifest, write_manifest, Split, TileRecord};
pub use split::{select_labeled_subset, LabeledSplit};
pub use synth::{generate_synthetic_dataset, write_dataset, SynthConfig};
pub use tiles::{read_png_tile, write_png_tile, TileDataset};
