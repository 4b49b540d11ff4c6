use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use handtrack_core::dataset::load_labeled_images;
use handtrack_core::derive_seed;
use handtrack_core::forest::{pixel_confusion, train_forest, TrainingConfig};

use crate::train::describe;
use crate::{csv_writer, expand_trials, sidecar_run_path, write_run_record, CliError, Command, Result, SweepArgs, SweepParam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub param_value: f64,
    pub uar: f64,
}

fn integral(param: SweepParam, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Usage(format!("{param:?} takes whole numbers, got {v}")))
    }
}

/// `base` with exactly one parameter replaced; also returns the fraction of
/// training images to use.
fn vary(base: &TrainingConfig, param: SweepParam, v: f64) -> Result<(TrainingConfig, f64)> {
    let mut c = base.clone();
    let mut fraction = 1.0;
    match param {
        SweepParam::Trees => c.n_trees = integral(param, v)?,
        SweepParam::MaxDepth => c.max_depth = integral(param, v)?,
        SweepParam::SamplesPerImage => c.samples_per_image = integral(param, v)?,
        SweepParam::MinGain => c.min_gain = v,
        SweepParam::ThetaMax => c.theta_max = v,
        SweepParam::TauMax => c.tau_max = v,
        SweepParam::ImageFraction => {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CliError::Usage(format!("image fraction {v} must be in (0, 1]")));
            }
            fraction = v;
        }
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((c, fraction))
}

/// Retrains once per value, varying one parameter of the fixed config, and
/// scores each forest by holdout UAR. Image fractions take nested prefixes
/// of one seeded shuffle of the training frames.
pub fn cmd_sweep(args: &SweepArgs, seed: u64) -> Result<Vec<SweepRow>> {
    let base = args.training.resolve(seed)?;
    let configs: Vec<(TrainingConfig, f64)> = args
        .values
        .iter()
        .map(|&v| vary(&base, args.param, v))
        .collect::<Result<_>>()?;
    println!("sweeping {:?} over {:?}; fixed {}", args.param, args.values, describe(&base));
    let mut images = load_labeled_images(&expand_trials(&args.data)?)?;
    let holdout = load_labeled_images(&expand_trials(&args.holdout)?)?;
    if args.param == SweepParam::ImageFraction {
        images.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5eed)));
    }
    let mut rows = Vec::new();
    for (&value, (config, fraction)) in args.values.iter().zip(&configs) {
        let n = ((images.len() as f64 * fraction).ceil() as usize).clamp(1, images.len());
        let start = Instant::now();
        let forest = train_forest(&images[..n], config)?.forest;
        let uar = pixel_confusion(&forest, &holdout).uar()?;
        println!("{value}: UAR {uar:.4} ({n} images, {:.1}s)", start.elapsed().as_secs_f64());
        rows.push(SweepRow { param_value: value, uar });
    }
    let mut w = csv_writer(&args.out)?;
    w.write_record(["param_value", "uar"])?;
    for r in &rows {
        w.write_record([r.param_value.to_string(), r.uar.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    write_run_record(
        &sidecar_run_path(&args.out),
        seed,
        Command::Sweep(args.clone()),
        serde_json::json!({ "fixed": base, "rows": rows }),
    )?;
    Ok(rows)
}
