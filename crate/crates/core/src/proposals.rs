//! World-space part proposals from per-pixel class PDFs.
//!
//! Seeds are pixels whose part probability clears a start threshold. Each
//! seed climbs the weighted Gaussian density of all classified pixels by
//! mean shift; converged points close to each other are merged into a mode
//! whose confidence is the kernel mass around it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::DecisionForest;
use crate::imaging::{CameraIntrinsics, DepthImage, Part, Pdf, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedPixel {
    pub world: WorldPoint,
    pub pdf: Pdf,
    /// Depth of the pixel in meters.
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartMode {
    pub part: Part,
    pub position: WorldPoint,
    pub confidence: f64,
}

/// A value for each tracked part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerPart<T> {
    pub left_hand: T,
    pub right_hand: T,
    pub head: T,
}

impl<T: Copy> PerPart<T> {
    pub fn uniform(v: T) -> Self {
        PerPart {
            left_hand: v,
            right_hand: v,
            head: v,
        }
    }

    pub fn get(&self, part: Part) -> T {
        match part {
            Part::LeftHand => self.left_hand,
            Part::RightHand => self.right_hand,
            Part::Head => self.head,
            p => panic!("{p} is not a tracked part"),
        }
    }

    pub fn set(&mut self, part: Part, value: T) {
        match part {
            Part::LeftHand => self.left_hand = value,
            Part::RightHand => self.right_hand = value,
            Part::Head => self.head = value,
            p => panic!("{p} is not a tracked part"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    /// Seed probability threshold per part.
    pub start_threshold: PerPart<f64>,
    /// Kernel bandwidth per part, meters.
    pub bandwidth: PerPart<f64>,
    pub merge_radius: f64,
    pub max_iterations: usize,
    pub convergence_epsilon: f64,
    /// Seeds beyond this count are subsampled.
    pub max_seeds: usize,
    /// Normalize each mean-shift step by the weighted kernel sum. When
    /// false the denominator is the plain kernel sum over all pixels.
    pub weighted_denominator: bool,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            start_threshold: PerPart {
                left_hand: 0.65,
                right_hand: 0.6,
                head: 0.95,
            },
            bandwidth: PerPart {
                left_hand: 0.05,
                right_hand: 0.05,
                head: 0.10,
            },
            merge_radius: 0.01,
            max_iterations: 100,
            convergence_epsilon: 1e-4,
            max_seeds: 500,
            weighted_denominator: true,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        for part in Part::TRACKED {
            let t = self.start_threshold.get(part);
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("start threshold {t} for {part} outside [0, 1]")));
            }
            let h = self.bandwidth.get(part);
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("bandwidth {h} for {part} must be positive")));
            }
        }
        if !(self.merge_radius >= 0.0) || !(self.convergence_epsilon > 0.0) || self.max_seeds == 0 {
            return Err(Error::Config(
                "merge_radius >= 0, convergence_epsilon > 0 and max_seeds >= 1 are required".into(),
            ));
        }
        Ok(())
    }
}

/// Pixels whose probability for `part` exceeds `threshold`.
pub fn select_seeds(pixels: &[ClassifiedPixel], part: Part, threshold: f64) -> Vec<WorldPoint> {
    seed_indices(pixels, part, threshold)
        .into_iter()
        .map(|i| pixels[i].world)
        .collect()
}

fn seed_indices(pixels: &[ClassifiedPixel], part: Part, threshold: f64) -> Vec<usize> {
    let k = part.class_index();
    (0..pixels.len()).filter(|&i| pixels[i].pdf[k] > threshold).collect()
}

/// Kernel weight of a pixel: part probability times squared depth.
pub fn pixel_weight(px: &ClassifiedPixel, part: Part) -> f64 {
    px.pdf[part.class_index()] * px.depth * px.depth
}

/// Mean-shift machinery for one part over one frame's classified pixels.
pub struct ModeSeeker<'a> {
    pixels: &'a [ClassifiedPixel],
    part: Part,
    inv_h2: f64,
    config: &'a ProposalConfig,
    /// Pixels with positive weight: (position, weight).
    support: Vec<(WorldPoint, f64)>,
    /// Per pixel: converged point and its density.
    converged: Vec<Option<(WorldPoint, f64)>>,
}

impl<'a> ModeSeeker<'a> {
    pub fn new(pixels: &'a [ClassifiedPixel], part: Part, config: &'a ProposalConfig) -> Self {
        let h = config.bandwidth.get(part);
        let support = pixels
            .iter()
            .filter_map(|p| {
                let w = pixel_weight(p, part);
                (w > 0.0).then_some((p.world, w))
            })
            .collect();
        ModeSeeker {
            pixels,
            part,
            inv_h2: 1.0 / (h * h),
            config,
            support,
            converged: vec![None; pixels.len()],
        }
    }

    /// Weighted kernel density `sum_i w_i exp(-|x - x_i|^2 / h^2)`, which is
    /// also the confidence of a mode at `x`.
    pub fn density(&self, x: &WorldPoint) -> f64 {
        self.support
            .iter()
            .map(|(p, w)| w * (-x.distance_squared(p) * self.inv_h2).exp())
            .sum()
    }

    /// One mean-shift update; `None` when every kernel weight underflows.
    pub fn step(&self, x: &WorldPoint) -> Option<WorldPoint> {
        let mut num = [0.0f64; 3];
        let mut den = 0.0f64;
        for (p, w) in &self.support {
            let k = (-x.distance_squared(p) * self.inv_h2).exp();
            let wk = w * k;
            num[0] += wk * p.x;
            num[1] += wk * p.y;
            num[2] += wk * p.z;
            if self.config.weighted_denominator {
                den += wk;
            }
        }
        if !self.config.weighted_denominator {
            den = self
                .pixels
                .iter()
                .map(|p| (-x.distance_squared(&p.world) * self.inv_h2).exp())
                .sum();
        }
        (den > 0.0).then(|| WorldPoint::new(num[0] / den, num[1] / den, num[2] / den))
    }

    /// Iterates from `start` until the step is below the convergence
    /// epsilon or the iteration cap is reached. Returns every iterate.
    pub fn trajectory(&self, start: WorldPoint) -> Vec<WorldPoint> {
        let mut path = vec![start];
        let mut x = start;
        for _ in 0..self.config.max_iterations {
            let Some(next) = self.step(&x) else { break };
            let moved = next.distance(&x);
            path.push(next);
            x = next;
            if moved < self.config.convergence_epsilon {
                break;
            }
        }
        path
    }

    pub fn converge(&self, start: WorldPoint) -> WorldPoint {
        *self.trajectory(start).last().expect("trajectory starts at the seed")
    }

    fn converge_pixel(&mut self, i: usize) -> (WorldPoint, f64) {
        if let Some(c) = self.converged[i] {
            return c;
        }
        let p = self.converge(self.pixels[i].world);
        let c = (p, self.density(&p));
        self.converged[i] = Some(c);
        c
    }

    /// Merges converged points and scores the resulting modes, highest
    /// confidence first.
    pub fn merge(&self, converged: &[WorldPoint]) -> Vec<PartMode> {
        let weighted: Vec<(WorldPoint, f64)> = converged.iter().map(|p| (*p, self.density(p))).collect();
        self.merge_weighted(&weighted)
    }

    fn merge_weighted(&self, converged: &[(WorldPoint, f64)]) -> Vec<PartMode> {
        // (weighted sum of members, total weight, current mean)
        let mut clusters: Vec<([f64; 3], f64, WorldPoint)> = Vec::new();
        for (p, density) in converged {
            let w = density.max(f64::MIN_POSITIVE);
            let slot = clusters
                .iter_mut()
                .find(|(_, _, mean)| mean.distance(p) <= self.config.merge_radius);
            match slot {
                Some((sum, total, mean)) => {
                    sum[0] += w * p.x;
                    sum[1] += w * p.y;
                    sum[2] += w * p.z;
                    *total += w;
                    *mean = WorldPoint::new(sum[0] / *total, sum[1] / *total, sum[2] / *total);
                }
                None => clusters.push(([w * p.x, w * p.y, w * p.z], w, *p)),
            }
        }
        let mut modes: Vec<PartMode> = clusters
            .into_iter()
            .map(|(_, _, mean)| PartMode {
                part: self.part,
                position: mean,
                confidence: self.density(&mean),
            })
            .collect();
        modes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        modes
    }

    /// Modes reached from arbitrary seed points.
    pub fn modes_from_points(&self, seeds: &[WorldPoint]) -> Vec<PartMode> {
        let seeds = subsample(seeds, self.config.max_seeds);
        let converged: Vec<WorldPoint> = seeds.iter().map(|s| self.converge(*s)).collect();
        self.merge(&converged)
    }

    /// Modes seeded by pixels above `threshold`. Convergence results are
    /// cached per pixel, so sweeping thresholds is cheap.
    pub fn modes_at_threshold(&mut self, threshold: f64) -> Vec<PartMode> {
        let seeds = subsample(&seed_indices(self.pixels, self.part, threshold), self.config.max_seeds);
        let converged: Vec<(WorldPoint, f64)> = seeds.iter().map(|&i| self.converge_pixel(i)).collect();
        self.merge_weighted(&converged)
    }
}

/// At most `max` evenly strided elements, in order.
fn subsample<T: Copy>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|i| items[i * items.len() / max]).collect()
}

/// Mean shift from `seeds` over all classified pixels for `part`.
pub fn mean_shift(seeds: &[WorldPoint], pixels: &[ClassifiedPixel], part: Part, config: &ProposalConfig) -> Result<Vec<PartMode>> {
    config.validate()?;
    if seeds.is_empty() {
        return Ok(Vec::new());
    }
    Ok(ModeSeeker::new(pixels, part, config).modes_from_points(seeds))
}

/// Samples up to `n` foreground pixels uniformly without replacement and
/// classifies each.
pub fn classify_sampled(
    forest: &DecisionForest,
    img: &DepthImage,
    k: &CameraIntrinsics,
    n: usize,
    seed: u64,
) -> Vec<ClassifiedPixel> {
    let fg = img.valid_pixels();
    if fg.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, fg.len(), n.min(fg.len())).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let (x, y) = fg[i];
            let d = img.get(x as usize, y as usize);
            ClassifiedPixel {
                world: k.unproject(x as f64, y as f64, d as f64),
                pdf: forest.classify_with_depth(img, x, y, d),
                depth: d as f64,
            }
        })
        .collect()
}

/// Modes for each tracked part in one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartProposals {
    pub left_hand: Vec<PartMode>,
    pub right_hand: Vec<PartMode>,
    pub head: Vec<PartMode>,
}

impl PartProposals {
    pub fn modes(&self, part: Part) -> &[PartMode] {
        match part {
            Part::LeftHand => &self.left_hand,
            Part::RightHand => &self.right_hand,
            Part::Head => &self.head,
            p => panic!("{p} is not a tracked part"),
        }
    }

    fn modes_mut(&mut self, part: Part) -> &mut Vec<PartMode> {
        match part {
            Part::LeftHand => &mut self.left_hand,
            Part::RightHand => &mut self.right_hand,
            Part::Head => &mut self.head,
            p => panic!("{p} is not a tracked part"),
        }
    }

    /// Highest-confidence mode, the part's position proposal.
    pub fn final_proposal(&self, part: Part) -> Option<&PartMode> {
        self.modes(part).first()
    }
}

/// Classifies `n` sampled foreground pixels and runs seed selection and
/// mean shift for every tracked part.
pub fn propose_parts(
    forest: &DecisionForest,
    img: &DepthImage,
    k: &CameraIntrinsics,
    n: usize,
    config: &ProposalConfig,
    seed: u64,
) -> Result<PartProposals> {
    config.validate()?;
    let pixels = classify_sampled(forest, img, k, n, seed);
    Ok(proposals_from_pixels(&pixels, config))
}

pub fn proposals_from_pixels(pixels: &[ClassifiedPixel], config: &ProposalConfig) -> PartProposals {
    let mut out = PartProposals::default();
    for part in Part::TRACKED {
        let mut seeker = ModeSeeker::new(pixels, part, config);
        *out.modes_mut(part) = seeker.modes_at_threshold(config.start_threshold.get(part));
    }
    out
}
