//! Depth-difference split features and random split-candidate pools.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::DepthImage;

/// Value read by a probe that lands off the image or on an invalid pixel.
/// Larger than any valid depth.
pub const BG_DEPTH: f32 = 100.0;

/// Two probe offsets in pixel-meters; divided by the center depth before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetPair {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl OffsetPair {
    pub fn swapped(self) -> Self {
        OffsetPair { u: self.v, v: self.u }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub offsets: OffsetPair,
    pub tau: f64,
}

/// Reciprocal of a center depth, the only form in which the depth enters the
/// probe arithmetic.
#[inline]
pub fn inverse_depth(d: f32) -> f64 {
    1.0 / d as f64
}

/// `v.round() as i64` without the library call: `v - trunc(v)` is exact.
#[inline]
fn round_half_away(v: f64) -> i64 {
    let t = v as i64;
    let frac = v - t as f64;
    t + (frac >= 0.5) as i64 - (frac <= -0.5) as i64
}

#[inline]
fn probe(img: &DepthImage, x: i64, y: i64, offset: [f64; 2], inv_depth: f64) -> f32 {
    let px = x + round_half_away(offset[0] * inv_depth);
    let py = y + round_half_away(offset[1] * inv_depth);
    match img.get_signed(px, py) {
        Some(d) if d > 0.0 => d,
        _ => BG_DEPTH,
    }
}

/// Feature at a pixel whose center depth is already known to be valid.
#[inline]
pub fn feature_with_inverse_depth(img: &DepthImage, x: u16, y: u16, inv_depth: f64, offsets: &OffsetPair) -> f64 {
    let (x, y) = (x as i64, y as i64);
    probe(img, x, y, offsets.u, inv_depth) as f64 - probe(img, x, y, offsets.v, inv_depth) as f64
}

/// `d(x + u/d(x)) - d(x + v/d(x))` at pixel `(x, y)`.
pub fn depth_feature(img: &DepthImage, x: usize, y: usize, offsets: &OffsetPair) -> Result<f64> {
    if !img.contains(x, y) {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: img.width(),
            height: img.height(),
        });
    }
    let d = img.get(x, y);
    if d <= 0.0 {
        return Err(Error::NoDepth { x, y });
    }
    Ok(feature_with_inverse_depth(img, x as u16, y as u16, inverse_depth(d), offsets))
}

/// Cross product of random offset pairs and random thresholds. Candidate
/// `i` pairs offset `i / thresholds.len()` with threshold
/// `i % thresholds.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub offsets: Vec<OffsetPair>,
    pub thresholds: Vec<f64>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.offsets.len() * self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> SplitCandidate {
        let nt = self.thresholds.len();
        SplitCandidate {
            offsets: self.offsets[index / nt],
            tau: self.thresholds[index % nt],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SplitCandidate> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// Draws `count_offsets` offset pairs with each component uniform on
/// `[-theta_max, theta_max]` and `count_thresholds` thresholds uniform on
/// `[-tau_max, tau_max]`.
pub fn generate_candidates(
    count_offsets: usize,
    count_thresholds: usize,
    theta_max: f64,
    tau_max: f64,
    seed: u64,
) -> Result<CandidatePool> {
    if count_offsets == 0 || count_thresholds == 0 {
        return Err(Error::InvalidInput("candidate counts must be at least 1".into()));
    }
    if !(theta_max >= 0.0 && theta_max.is_finite() && tau_max >= 0.0 && tau_max.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "theta_max {theta_max} and tau_max {tau_max} must be finite and non-negative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let component = |rng: &mut ChaCha8Rng| rng.random_range(-theta_max..=theta_max);
    let offsets = (0..count_offsets)
        .map(|_| OffsetPair {
            u: [component(&mut rng), component(&mut rng)],
            v: [component(&mut rng), component(&mut rng)],
        })
        .collect();
    let thresholds = (0..count_thresholds)
        .map(|_| rng.random_range(-tau_max..=tau_max))
        .collect();
    Ok(CandidatePool { offsets, thresholds })
}
