//! Body-part classification on overhead depth images with a random
//! decision forest, mean-shift part proposals, and hand-washing activity
//! and step tracking on top of the hand proposals.
//!
//! Synthetic scenes (`synth`, `dataset`) stand in for recorded trials.

pub mod activity;
pub mod dataset;
pub mod error;
pub mod features;
pub mod forest;
pub mod imaging;
pub mod metrics;
pub mod pgm;
pub mod proposals;
pub mod synth;

pub use error::{Error, Result};
pub use imaging::{CameraIntrinsics, DepthImage, LabelImage, Part, WorldPoint};

/// Mixes a base seed with a stream index (splitmix64 finalizer), so
/// independent random streams can be derived from one user seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
