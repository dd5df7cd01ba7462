//! Stain-separated contrastive co-training for H&E tile classification.
//!
//! RGB tiles are split into hematoxylin and eosin channels ([`stain`]); two
//! residual encoders embed the channels ([`model`]) and are coupled by a
//! triplet loss between their features ([`objective`]) while a single
//! classifier reads the averaged features. [`training`] drives experiments
//! and [`viewanalysis`] measures how predictable one channel is from another.

pub mod channel;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod model;
pub mod objective;
pub mod plane;
pub mod rng;
pub mod stain;
pub mod training;
pub mod viewanalysis;

pub use channel::{extract_channel, Channel};
pub use error::{Error, Result};
pub use plane::Plane;
pub use stain::{rgb_to_stain_pair, RgbTile, StainMatrix, StainPair};
