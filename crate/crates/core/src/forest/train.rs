//! Sampling, entropy and greedy split search for decision trees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Node, Tree};
use crate::error::{Error, Result};
use crate::features::{feature_with_inverse_depth, inverse_depth, CandidatePool, SplitCandidate};
use crate::imaging::{DepthImage, LabelImage, Part, NUM_CLASSES};

/// Class histogram over `[left_hand, right_hand, head, body]`.
pub type ClassCounts = [usize; NUM_CLASSES];

/// Depth image with its per-pixel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub depth: DepthImage,
    pub labels: LabelImage,
}

impl LabeledImage {
    pub fn new(depth: DepthImage, labels: LabelImage) -> Result<Self> {
        crate::imaging::check_same_size(&depth, &labels)?;
        Ok(LabeledImage { depth, labels })
    }

    /// Training class of a foreground pixel. Foreground pixels without an
    /// explicit label count as body.
    #[inline]
    pub fn class_at(&self, x: usize, y: usize) -> Part {
        match self.labels.get(x, y) {
            Part::Background => Part::Body,
            p => p,
        }
    }
}

/// One training pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub image: u32,
    pub x: u16,
    pub y: u16,
    pub label: Part,
    inv_depth: f64,
}

impl TrainingSample {
    pub fn new(images: &[LabeledImage], image: usize, x: u16, y: u16, label: Part) -> Result<Self> {
        let img = images
            .get(image)
            .ok_or_else(|| Error::InvalidInput(format!("image index {image} out of range")))?;
        let d = img.depth.get(x as usize, y as usize);
        if d <= 0.0 {
            return Err(Error::NoDepth {
                x: x as usize,
                y: y as usize,
            });
        }
        if label == Part::Background {
            return Err(Error::InvalidInput("training samples cannot be background".into()));
        }
        Ok(TrainingSample {
            image: image as u32,
            x,
            y,
            label,
            inv_depth: inverse_depth(d),
        })
    }

    #[inline]
    pub fn feature(&self, images: &[LabeledImage], candidate: &SplitCandidate) -> f64 {
        feature_with_inverse_depth(
            &images[self.image as usize].depth,
            self.x,
            self.y,
            self.inv_depth,
            &candidate.offsets,
        )
    }

    #[inline]
    fn class(&self) -> usize {
        self.label.class_index()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<TrainingSample>,
    /// Images skipped because they had no foreground.
    pub skipped_images: usize,
}

/// Draws `min(n, foreground)` foreground pixels per image uniformly without
/// replacement.
pub fn sample_pixels(images: &[LabeledImage], n: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut skipped_images = 0;
    for (i, img) in images.iter().enumerate() {
        let fg = img.depth.valid_pixels();
        if fg.is_empty() {
            skipped_images += 1;
            continue;
        }
        let amount = n.min(fg.len());
        let mut picked = rand::seq::index::sample(&mut rng, fg.len(), amount).into_vec();
        picked.sort_unstable();
        for idx in picked {
            let (x, y) = fg[idx];
            let d = img.depth.get(x as usize, y as usize);
            samples.push(TrainingSample {
                image: i as u32,
                x,
                y,
                label: img.class_at(x as usize, y as usize),
                inv_depth: inverse_depth(d),
            });
        }
    }
    if skipped_images > 0 {
        log::warn!("skipped {skipped_images} training images without foreground");
    }
    SampleSet {
        samples,
        skipped_images,
    }
}

pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a Part>) -> ClassCounts {
    let mut c = [0; NUM_CLASSES];
    for l in labels {
        c[l.class_index()] += 1;
    }
    c
}

fn sample_counts(samples: &[TrainingSample]) -> ClassCounts {
    let mut c = [0; NUM_CLASSES];
    for s in samples {
        c[s.class()] += 1;
    }
    c
}

/// Shannon entropy in bits of a class histogram; 0 for an empty histogram.
pub fn entropy_of_counts(counts: &ClassCounts) -> f64 {
    // Sorted so that permuted histograms give bit-identical entropies.
    let mut sorted = *counts;
    sorted.sort_unstable();
    let total: usize = sorted.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut h = 0.0;
    for &c in &sorted {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    h
}

pub fn entropy(labels: &[Part]) -> f64 {
    entropy_of_counts(&class_counts(labels))
}

/// Information gain of splitting `parent` into `left` and `parent - left`.
pub fn split_gain(parent: &ClassCounts, left: &ClassCounts) -> f64 {
    let mut right = [0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        right[k] = parent[k] - left[k];
    }
    let n: usize = parent.iter().sum();
    let nl: usize = left.iter().sum();
    let nr = n - nl;
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    entropy_of_counts(parent) - (nl as f64 / n) * entropy_of_counts(left) - (nr as f64 / n) * entropy_of_counts(&right)
}

/// Splits samples into `(feature < tau, feature >= tau)`.
pub fn partition(
    samples: &[TrainingSample],
    images: &[LabeledImage],
    candidate: &SplitCandidate,
) -> (Vec<TrainingSample>, Vec<TrainingSample>) {
    samples
        .iter()
        .partition(|s| s.feature(images, candidate) < candidate.tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    /// Index into the candidate pool.
    pub index: usize,
    pub candidate: SplitCandidate,
    pub gain: f64,
    pub left_count: usize,
}

/// Work size (samples x offsets) above which offsets are scored in parallel.
const PARALLEL_WORK: usize = 1 << 16;

/// Number of `sorted` values `<= f`, like `partition_point` but without
/// data-dependent branches.
#[inline]
fn count_at_most(sorted: &[f64], f: f64) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    let mut base = 0;
    let mut n = sorted.len();
    while n > 1 {
        let half = n / 2;
        base = if sorted[base + half] <= f { base + half } else { base };
        n -= half;
    }
    base + (sorted[base] <= f) as usize
}

/// Offsets scored together in one pass over the samples. Keeping the
/// sample loop outermost lets consecutive samples of one image share cache.
const OFFSET_CHUNK: usize = 16;

/// Best split of each offset pair in `offsets` over every threshold:
/// `(candidate index, gain, left size)`.
fn best_for_offsets(
    samples: &[TrainingSample],
    images: &[LabeledImage],
    pool: &CandidatePool,
    sorted_thresholds: &[(f64, usize)],
    parent: &ClassCounts,
    offsets: std::ops::Range<usize>,
) -> (usize, f64, usize) {
    let nt = sorted_thresholds.len();
    let values: Vec<f64> = sorted_thresholds.iter().map(|&(t, _)| t).collect();
    let chunk = &pool.offsets[offsets.clone()];
    // hist[c][b] counts samples with exactly b thresholds <= feature for
    // offset c; such a sample goes left for every sorted threshold j >= b.
    let mut hist = vec![[0u32; NUM_CLASSES]; chunk.len() * (nt + 1)];
    for s in samples {
        let img = &images[s.image as usize].depth;
        let class = s.class();
        for (c, o) in chunk.iter().enumerate() {
            let f = feature_with_inverse_depth(img, s.x, s.y, s.inv_depth, o);
            let b = count_at_most(&values, f);
            hist[c * (nt + 1) + b][class] += 1;
        }
    }
    let mut best = (usize::MAX, f64::NEG_INFINITY, 0usize);
    for (c, o) in offsets.enumerate() {
        let mut left = [0usize; NUM_CLASSES];
        for (j, &(_, t)) in sorted_thresholds.iter().enumerate() {
            for (k, l) in left.iter_mut().enumerate() {
                *l += hist[c * (nt + 1) + j][k] as usize;
            }
            let gain = split_gain(parent, &left);
            best = better(best, (o * nt + t, gain, left.iter().sum()));
        }
    }
    best
}

fn better(a: (usize, f64, usize), b: (usize, f64, usize)) -> (usize, f64, usize) {
    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}

/// Candidate with the largest information gain; ties go to the lowest
/// candidate index.
pub fn best_split(samples: &[TrainingSample], images: &[LabeledImage], pool: &CandidatePool) -> Result<BestSplit> {
    if samples.is_empty() || pool.is_empty() {
        return Err(Error::InvalidInput("best_split needs at least one sample and one candidate".into()));
    }
    let mut sorted: Vec<(f64, usize)> = pool.thresholds.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(best_split_sorted(samples, images, pool, &sorted))
}

fn best_split_sorted(
    samples: &[TrainingSample],
    images: &[LabeledImage],
    pool: &CandidatePool,
    sorted_thresholds: &[(f64, usize)],
) -> BestSplit {
    let parent = sample_counts(samples);
    let no = pool.offsets.len();
    let score = |c: usize| {
        let start = c * OFFSET_CHUNK;
        best_for_offsets(samples, images, pool, sorted_thresholds, &parent, start..(start + OFFSET_CHUNK).min(no))
    };
    let init = (usize::MAX, f64::NEG_INFINITY, 0usize);
    let chunks = no.div_ceil(OFFSET_CHUNK);
    let (index, gain, left_count) = if samples.len() * no >= PARALLEL_WORK {
        (0..chunks).into_par_iter().map(score).reduce(|| init, better)
    } else {
        (0..chunks).map(score).fold(init, better)
    };
    BestSplit {
        index,
        candidate: pool.get(index),
        gain,
        left_count,
    }
}

/// Stopping rules for a single tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_gain: f64,
}

/// Per-node bookkeeping gathered while growing a tree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreeReport {
    /// Gain of the chosen split at every interior node.
    pub split_gains: Vec<f64>,
    /// Training histogram reaching each leaf, indexed like the tree nodes.
    pub leaf_counts: Vec<(usize, ClassCounts)>,
    pub sample_counts: ClassCounts,
}

fn leaf_pdf(counts: &ClassCounts) -> [f64; NUM_CLASSES] {
    let n: usize = counts.iter().sum();
    let mut pdf = [0.0; NUM_CLASSES];
    if n == 0 {
        return [1.0 / NUM_CLASSES as f64; NUM_CLASSES];
    }
    for k in 0..NUM_CLASSES {
        pdf[k] = counts[k] as f64 / n as f64;
    }
    pdf
}

/// Grows one tree by recursive gain maximization. Samples are reordered
/// in place.
pub fn train_tree(
    samples: &mut [TrainingSample],
    images: &[LabeledImage],
    pool: &CandidatePool,
    params: TreeParams,
) -> Result<(Tree, TreeReport)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot train a tree without samples".into()));
    }
    if pool.is_empty() {
        return Err(Error::InvalidInput("cannot train a tree without split candidates".into()));
    }
    let mut sorted: Vec<(f64, usize)> = pool.thresholds.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut builder = Builder {
        images,
        pool,
        sorted: &sorted,
        params,
        nodes: Vec::new(),
        report: TreeReport {
            sample_counts: sample_counts(samples),
            ..Default::default()
        },
    };
    builder.grow(samples, 0);
    Ok((Tree { nodes: builder.nodes }, builder.report))
}

struct Builder<'a> {
    images: &'a [LabeledImage],
    pool: &'a CandidatePool,
    sorted: &'a [(f64, usize)],
    params: TreeParams,
    nodes: Vec<Node>,
    report: TreeReport,
}

impl Builder<'_> {
    fn leaf(&mut self, samples: &[TrainingSample]) -> usize {
        let counts = sample_counts(samples);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { pdf: leaf_pdf(&counts) });
        self.report.leaf_counts.push((id, counts));
        id
    }

    fn grow(&mut self, samples: &mut [TrainingSample], depth: usize) -> usize {
        // a pure node has zero gain for every candidate
        let pure = sample_counts(samples).iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.params.max_depth || pure {
            return self.leaf(samples);
        }
        let best = best_split_sorted(samples, self.images, self.pool, self.sorted);
        if !(best.gain > self.params.min_gain) || best.left_count == 0 || best.left_count == samples.len() {
            return self.leaf(samples);
        }
        let candidate = best.candidate;
        let mid = partition_in_place(samples, |s| s.feature(self.images, &candidate) < candidate.tau);
        debug_assert_eq!(mid, best.left_count);
        let id = self.nodes.len();
        self.nodes.push(Node::Split {
            candidate,
            left: 0,
            right: 0,
        });
        self.report.split_gains.push(best.gain);
        let (left_samples, right_samples) = samples.split_at_mut(mid);
        let l = self.grow(left_samples, depth + 1);
        let r = self.grow(right_samples, depth + 1);
        if let Node::Split { left, right, .. } = &mut self.nodes[id] {
            *left = l as u32;
            *right = r as u32;
        }
        id
    }
}

/// Moves elements satisfying `pred` to the front; returns their count.
/// Stable partition: both sides keep their relative order, so samples of
/// one image stay adjacent all the way down the tree.
fn partition_in_place<T: Copy>(items: &mut [T], mut pred: impl FnMut(&T) -> bool) -> usize {
    let mut right = Vec::new();
    let mut mid = 0;
    for i in 0..items.len() {
        let item = items[i];
        if pred(&item) {
            items[mid] = item;
            mid += 1;
        } else {
            right.push(item);
        }
    }
    items[mid..].copy_from_slice(&right);
    mid
}
