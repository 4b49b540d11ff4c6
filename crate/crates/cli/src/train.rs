use std::time::Instant;

use serde::Serialize;

use handtrack_core::dataset::load_labeled_images;
use handtrack_core::forest::{train_forest, TrainingConfig};

use crate::{expand_trials, sidecar_run_path, write_run_record, write_text, Command, Result, TrainArgs};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub config: TrainingConfig,
    pub images: usize,
    pub node_counts: Vec<usize>,
}

pub(crate) fn describe(c: &TrainingConfig) -> String {
    format!(
        "T={} D_max={} g_min={} N={} theta_max={} tau_max={} offsets={} thresholds={} seed={}",
        c.n_trees,
        c.max_depth,
        c.min_gain,
        c.samples_per_image,
        c.theta_max,
        c.tau_max,
        c.count_offsets,
        c.count_thresholds,
        c.rng_seed
    )
}

/// Trains on every frame of the given trials and writes the model JSON.
pub fn cmd_train(args: &TrainArgs, seed: u64) -> Result<TrainSummary> {
    let config = args.training.resolve(seed)?;
    println!("training with {}", describe(&config));
    let trials = expand_trials(&args.data)?;
    let images = load_labeled_images(&trials)?;
    let start = Instant::now();
    let trained = train_forest(&images, &config)?;
    let node_counts: Vec<usize> = trained.forest.trees.iter().map(|t| t.nodes.len()).collect();
    for (i, t) in trained.forest.trees.iter().enumerate() {
        println!("tree {i}: {} nodes, {} leaves, depth {}", t.nodes.len(), t.leaf_count(), t.depth());
    }
    println!("trained on {} images in {:.1}s", images.len(), start.elapsed().as_secs_f64());
    write_text(&args.out, &trained.forest.to_json()?)?;
    let summary = TrainSummary {
        config,
        images: images.len(),
        node_counts,
    };
    write_run_record(
        &sidecar_run_path(&args.out),
        seed,
        Command::Train(args.clone()),
        serde_json::to_value(&summary)?,
    )?;
    Ok(summary)
}
