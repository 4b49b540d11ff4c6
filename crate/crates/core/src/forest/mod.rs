//! Randomized decision forests over depth features.
//!
//! Each tree is grown on its own pixel sample and its own candidate pool,
//! both drawn from seeds derived from the forest seed, so training is
//! reproducible regardless of how many worker threads run.

mod train;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use train::{
    best_split, class_counts, entropy, entropy_of_counts, partition, sample_pixels, split_gain, train_tree,
    BestSplit, ClassCounts, LabeledImage, SampleSet, TrainingSample, TreeParams, TreeReport,
};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::features::{feature_with_inverse_depth, generate_candidates, inverse_depth, OffsetPair, SplitCandidate};
use crate::imaging::{DepthImage, Part, Pdf, NUM_CLASSES};
use crate::metrics::ConfusionMatrix;

pub const FORMAT_VERSION: u32 = 1;

/// Hyperparameters for forest training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_gain: f64,
    pub samples_per_image: usize,
    /// Largest offset component, pixel-meters.
    pub theta_max: f64,
    /// Largest threshold magnitude, meters.
    pub tau_max: f64,
    pub count_offsets: usize,
    pub count_thresholds: usize,
    pub rng_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n_trees: 3,
            max_depth: 20,
            min_gain: 0.05,
            samples_per_image: 4000,
            theta_max: 500.0,
            tau_max: 1.0,
            count_offsets: 3000,
            count_thresholds: 100,
            rng_seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Defaults with the best-performing depth, gain, offset and sample
    /// settings.
    pub fn optimal() -> Self {
        TrainingConfig {
            max_depth: 12,
            min_gain: 0.0,
            theta_max: 250.0,
            samples_per_image: 3000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_trees", self.n_trees),
            ("samples_per_image", self.samples_per_image),
            ("count_offsets", self.count_offsets),
            ("count_thresholds", self.count_thresholds),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.min_gain >= 0.0 && self.min_gain.is_finite()) {
            return Err(Error::Config(format!("min_gain {} must be >= 0", self.min_gain)));
        }
        if !(self.theta_max >= 0.0 && self.theta_max.is_finite() && self.tau_max >= 0.0 && self.tau_max.is_finite()) {
            return Err(Error::Config("theta_max and tau_max must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        candidate: SplitCandidate,
        left: u32,
        right: u32,
    },
    Leaf {
        pdf: Pdf,
    },
}

/// Binary tree in an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// A tree that is a single leaf.
    pub fn leaf(pdf: Pdf) -> Self {
        Tree {
            nodes: vec![Node::Leaf { pdf }],
        }
    }

    pub(crate) fn leaf_index(&self, depth: &DepthImage, x: u16, y: u16, inv_depth: f64) -> usize {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { candidate, left, right } => {
                    let f = feature_with_inverse_depth(depth, x, y, inv_depth, &candidate.offsets);
                    i = if f < candidate.tau { *left } else { *right } as usize;
                }
            }
        }
    }

    #[inline]
    fn classify(&self, depth: &DepthImage, x: u16, y: u16, inv_depth: f64) -> &Pdf {
        match &self.nodes[self.leaf_index(depth, x, y, inv_depth)] {
            Node::Leaf { pdf } => pdf,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionForest {
    pub trees: Vec<Tree>,
    pub config: TrainingConfig,
}

impl DecisionForest {
    pub fn new(trees: Vec<Tree>, config: TrainingConfig) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidInput("a forest needs at least one tree".into()));
        }
        Ok(DecisionForest { trees, config })
    }

    /// Mean leaf PDF over all trees at a pixel with known valid depth.
    #[inline]
    pub(crate) fn classify_with_depth(&self, depth: &DepthImage, x: u16, y: u16, d: f32) -> Pdf {
        let inv = inverse_depth(d);
        let mut sum = [0.0; NUM_CLASSES];
        for tree in &self.trees {
            let pdf = tree.classify(depth, x, y, inv);
            for k in 0..NUM_CLASSES {
                sum[k] += pdf[k];
            }
        }
        let t = self.trees.len() as f64;
        sum.map(|v| v / t)
    }

    pub fn to_json(&self) -> Result<String> {
        let record = ForestRecord {
            format_version: FORMAT_VERSION,
            class_names: Part::CLASSES.iter().map(|p| p.name().to_string()).collect(),
            training_config: self.config.clone(),
            trees: self.trees.iter().map(|t| to_record(&t.nodes, 0)).collect(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: ForestRecord = serde_json::from_str(text)?;
        if record.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported forest format_version {}",
                record.format_version
            )));
        }
        let expected: Vec<&str> = Part::CLASSES.iter().map(|p| p.name()).collect();
        if record.class_names != expected {
            return Err(Error::InvalidInput(format!(
                "forest classes {:?} differ from {:?}",
                record.class_names, expected
            )));
        }
        let trees = record
            .trees
            .iter()
            .map(|r| {
                let mut nodes = Vec::new();
                from_record(r, &mut nodes);
                Tree { nodes }
            })
            .collect();
        DecisionForest::new(trees, record.training_config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ForestRecord {
    format_version: u32,
    class_names: Vec<String>,
    training_config: TrainingConfig,
    trees: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    u: [f64; 2],
    v: [f64; 2],
    tau: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRecord {
    Split {
        split: SplitRecord,
        left: Box<NodeRecord>,
        right: Box<NodeRecord>,
    },
    Leaf {
        leaf: Pdf,
    },
}

fn to_record(nodes: &[Node], i: usize) -> NodeRecord {
    match &nodes[i] {
        Node::Leaf { pdf } => NodeRecord::Leaf { leaf: *pdf },
        Node::Split { candidate, left, right } => NodeRecord::Split {
            split: SplitRecord {
                u: candidate.offsets.u,
                v: candidate.offsets.v,
                tau: candidate.tau,
            },
            left: Box::new(to_record(nodes, *left as usize)),
            right: Box::new(to_record(nodes, *right as usize)),
        },
    }
}

fn from_record(record: &NodeRecord, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    match record {
        NodeRecord::Leaf { leaf } => nodes.push(Node::Leaf { pdf: *leaf }),
        NodeRecord::Split { split, left, right } => {
            nodes.push(Node::Split {
                candidate: SplitCandidate {
                    offsets: OffsetPair { u: split.u, v: split.v },
                    tau: split.tau,
                },
                left: 0,
                right: 0,
            });
            let l = from_record(left, nodes) as u32;
            let r = from_record(right, nodes) as u32;
            nodes[id] = Node::Split {
                candidate: SplitCandidate {
                    offsets: OffsetPair { u: split.u, v: split.v },
                    tau: split.tau,
                },
                left: l,
                right: r,
            };
        }
    }
    id
}

/// Forest together with per-tree training bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainedForest {
    pub forest: DecisionForest,
    pub reports: Vec<TreeReport>,
}

/// Seeds for tree `t`: `(pixel sampling, candidate pool)`.
fn tree_seeds(base: u64, t: usize) -> (u64, u64) {
    let tree_seed = derive_seed(base, t as u64);
    (derive_seed(tree_seed, 0), derive_seed(tree_seed, 1))
}

/// Trains `config.n_trees` trees, each on its own pixel sample and its own
/// candidate pool.
pub fn train_forest(images: &[LabeledImage], config: &TrainingConfig) -> Result<TrainedForest> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let params = TreeParams {
        max_depth: config.max_depth,
        min_gain: config.min_gain,
    };
    let results: Vec<(Tree, TreeReport)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let (sample_seed, pool_seed) = tree_seeds(config.rng_seed, t);
            let mut set = sample_pixels(images, config.samples_per_image, sample_seed);
            if set.samples.is_empty() {
                return Err(Error::InvalidInput("no training image has foreground pixels".into()));
            }
            let pool = generate_candidates(
                config.count_offsets,
                config.count_thresholds,
                config.theta_max,
                config.tau_max,
                pool_seed,
            )?;
            train_tree(&mut set.samples, images, &pool, params)
        })
        .collect::<Result<_>>()?;
    let (trees, reports) = results.into_iter().unzip();
    Ok(TrainedForest {
        forest: DecisionForest::new(trees, config.clone())?,
        reports,
    })
}

/// Class PDF at a valid foreground pixel, averaged over the trees.
pub fn classify_pixel(forest: &DecisionForest, img: &DepthImage, x: usize, y: usize) -> Result<Pdf> {
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
    Ok(forest.classify_with_depth(img, x as u16, y as u16, d))
}

/// Index of the most probable class; ties go to the lower index.
pub fn argmax(pdf: &Pdf) -> usize {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if pdf[k] > pdf[best] {
            best = k;
        }
    }
    best
}

/// Confusion between ground-truth class and most likely predicted class over
/// every foreground pixel of the given images.
pub fn pixel_confusion(forest: &DecisionForest, images: &[LabeledImage]) -> ConfusionMatrix {
    images
        .par_iter()
        .map(|img| {
            let mut cm = ConfusionMatrix::new(NUM_CLASSES);
            for (x, y) in img.depth.valid_pixels() {
                let d = img.depth.get(x as usize, y as usize);
                let pdf = forest.classify_with_depth(&img.depth, x, y, d);
                let truth = img.class_at(x as usize, y as usize).class_index();
                cm.add(truth, argmax(&pdf), 1);
            }
            cm
        })
        .reduce(|| ConfusionMatrix::new(NUM_CLASSES), |a, b| a.merged(&b))
}
