//! Encoders, the dual-branch classifier and checkpoints.

pub mod checkpoint;
pub mod fused_bn;
pub mod im2col;
pub mod layers;
pub mod params;
pub mod resnet;
pub mod variant;

pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta};
pub use params::ParamStore;
pub use resnet::{Architecture, EncoderSpec, ResNetEncoder};
pub use variant::{
    adapt_first_layer, build_variant, ClassifierHead, DualFeatures, StainCoModel, VariantKind, NUM_CLASSES,
};
