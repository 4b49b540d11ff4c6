use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use handtrack_core::dataset::Trial;
use handtrack_core::derive_seed;
use handtrack_core::forest::{argmax, classify_pixel, pixel_confusion, DecisionForest};
use handtrack_core::imaging::{segment_foreground, LabelImage, Part};
use handtrack_core::metrics::{
    average_precision, eer_threshold, mean_average_precision, pr_curve, score_all_modes, threshold_grid, BinaryCounts,
    ConfusionMatrix,
};
use handtrack_core::pgm;
use handtrack_core::proposals::{classify_sampled, proposals_from_pixels, ClassifiedPixel, ModeSeeker, ProposalConfig};
use handtrack_core::WorldPoint;

use crate::{
    csv_writer,
    create_dir, expand_trials, opt, sidecar_run_path, write_run_record, ClassifyArgs, CliError, Command, EvaluateArgs,
    ProposeArgs, Result, RUN_FILE,
};

/// Seed for the pixel sample of one frame of one trial.
pub(crate) fn frame_seed(seed: u64, trial: usize, frame: usize) -> u64 {
    derive_seed(derive_seed(seed, trial as u64), frame as u64)
}

pub(crate) fn frame_pixels(
    forest: &DecisionForest,
    trial: &Trial,
    frame: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<ClassifiedPixel>> {
    let fg = trial.foreground(frame)?;
    Ok(classify_sampled(forest, &fg, &trial.manifest.intrinsics, samples, seed))
}

pub(crate) fn load_model(path: &Path) -> Result<DecisionForest> {
    Ok(DecisionForest::load(path)?)
}

/// Writes argmax labels of the foreground pixels of one depth image.
pub fn cmd_classify(args: &ClassifyArgs, seed: u64) -> Result<()> {
    let forest = load_model(&args.model)?;
    let raw = pgm::read_depth(&args.depth)?;
    let img = match args.background_threshold {
        Some(t) => segment_foreground(&raw, t as f32)?,
        None => raw,
    };
    let mut labels = LabelImage::background(img.width(), img.height());
    for (x, y) in img.valid_pixels() {
        let pdf = classify_pixel(&forest, &img, x as usize, y as usize)?;
        labels.set(x as usize, y as usize, Part::from_class_index(argmax(&pdf)));
    }
    pgm::write_labels(&args.out, &labels)?;
    let counts: BTreeMap<&str, usize> = Part::CLASSES.iter().map(|p| (p.name(), labels.count(*p))).collect();
    for (name, n) in &counts {
        println!("{name}: {n} pixels");
    }
    write_run_record(
        &sidecar_run_path(&args.out),
        seed,
        Command::Classify(args.clone()),
        serde_json::to_value(&counts)?,
    )
}

/// Writes every mode of every tracked part for each frame of a trial;
/// rank 0 is the final proposal.
pub fn cmd_propose(args: &ProposeArgs, seed: u64) -> Result<()> {
    let config = args.proposals.resolve()?;
    let forest = load_model(&args.model)?;
    let trial = Trial::open(&args.trial)?;
    let per_frame: Vec<_> = (0..trial.len())
        .into_par_iter()
        .map(|i| {
            let pixels = frame_pixels(&forest, &trial, i, args.proposals.samples, frame_seed(seed, 0, i))?;
            Ok(proposals_from_pixels(&pixels, &config))
        })
        .collect::<Result<_>>()?;
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("proposals.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["frame", "part", "rank", "x", "y", "z", "confidence"])?;
    for (i, props) in per_frame.iter().enumerate() {
        for part in Part::TRACKED {
            for (rank, m) in props.modes(part).iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    part.name().to_string(),
                    rank.to_string(),
                    m.position.x.to_string(),
                    m.position.y.to_string(),
                    m.position.z.to_string(),
                    m.confidence.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    println!("proposals for {} frames written to {}", per_frame.len(), path.display());
    write_run_record(
        &args.out_dir.join(RUN_FILE),
        seed,
        Command::Propose(args.clone()),
        serde_json::to_value(&config)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartReport {
    pub part: Part,
    pub ap: Option<f64>,
    pub eer_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub frames: usize,
    pub confusion: ConfusionMatrix,
    pub recalls: BTreeMap<String, Option<f64>>,
    pub uar: f64,
    pub accuracy: f64,
    pub parts: Vec<PartReport>,
    pub map: f64,
}

/// All-modes counts of one frame at every grid threshold, per tracked part.
fn frame_pr_counts(
    pixels: &[ClassifiedPixel],
    truth: &handtrack_core::proposals::PerPart<Option<WorldPoint>>,
    grid: &[f64],
    config: &ProposalConfig,
    args: &EvaluateArgs,
) -> Result<Vec<Vec<BinaryCounts>>> {
    let deltas = args.scoring.deltas()?;
    let rule = args.scoring.rule();
    Ok(Part::TRACKED
        .iter()
        .map(|&part| {
            let mut seeker = ModeSeeker::new(pixels, part, config);
            grid.iter()
                .map(|&t| {
                    let modes: Vec<WorldPoint> = seeker.modes_at_threshold(t).iter().map(|m| m.position).collect();
                    score_all_modes(&modes, truth.get(part).as_ref(), deltas.get(part), rule)
                })
                .collect()
        })
        .collect())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-pixel confusion and UAR over every holdout foreground pixel, plus a
/// PR curve per part from sweeping the seed threshold.
pub fn cmd_evaluate(args: &EvaluateArgs, seed: u64) -> Result<EvaluateReport> {
    let config = args.proposals.resolve()?;
    args.scoring.deltas()?;
    if args.grid < 2 {
        return Err(CliError::Usage("--grid needs at least 2 points".into()));
    }
    let forest = load_model(&args.model)?;
    let trials = expand_trials(&args.holdout)?;
    let grid = threshold_grid(args.grid);
    let mut confusion = ConfusionMatrix::new(Part::CLASSES.len());
    let mut totals = vec![vec![BinaryCounts::default(); grid.len()]; Part::TRACKED.len()];
    let mut frames = 0;
    for (ti, dir) in trials.iter().enumerate() {
        let trial = Trial::open(dir)?;
        confusion = confusion.merged(&pixel_confusion(&forest, &trial.labeled_images()?));
        let per_frame: Vec<Vec<Vec<BinaryCounts>>> = (0..trial.len())
            .into_par_iter()
            .map(|i| {
                let pixels = frame_pixels(&forest, &trial, i, args.proposals.samples, frame_seed(seed, ti, i))?;
                frame_pr_counts(&pixels, &trial.manifest.frames[i].label_centers, &grid, &config, args)
            })
            .collect::<Result<_>>()?;
        for f in per_frame {
            for (p, counts) in f.into_iter().enumerate() {
                for (g, c) in counts.into_iter().enumerate() {
                    totals[p][g] += c;
                }
            }
        }
        frames += trial.len();
    }

    create_dir(&args.out_dir)?;
    let mut parts = Vec::new();
    for (p, part) in Part::TRACKED.iter().enumerate() {
        let counts: Vec<(f64, BinaryCounts)> = grid.iter().copied().zip(totals[p].iter().copied()).collect();
        let report = match pr_curve(&counts) {
            Ok(curve) => {
                write_csv(
                    &args.out_dir.join(format!("pr_{}.csv", part.name())),
                    &["threshold", "precision", "recall"],
                    curve
                        .points
                        .iter()
                        .map(|pt| vec![pt.threshold.to_string(), pt.precision.to_string(), pt.recall.to_string()]),
                )?;
                PartReport {
                    part: *part,
                    ap: Some(average_precision(&curve)?),
                    eer_threshold: Some(eer_threshold(&curve)?),
                }
            }
            Err(handtrack_core::Error::UndefinedMetric(_)) => PartReport {
                part: *part,
                ap: None,
                eer_threshold: None,
            },
            Err(e) => return Err(e.into()),
        };
        parts.push(report);
    }
    write_csv(
        &args.out_dir.join("ap.csv"),
        &["part", "ap", "eer_threshold"],
        parts
            .iter()
            .map(|r| vec![r.part.name().to_string(), opt(r.ap), opt(r.eer_threshold)]),
    )?;
    let aps: Vec<f64> = parts.iter().filter_map(|r| r.ap).collect();
    let map = mean_average_precision(&aps)?;

    let recalls: BTreeMap<String, Option<f64>> = Part::CLASSES
        .iter()
        .zip(confusion.recalls())
        .map(|(p, r)| (p.name().to_string(), r))
        .collect();
    let uar = confusion.uar()?;
    let accuracy = confusion.accuracy()?;
    let mut rows = Vec::new();
    for (t, truth) in Part::CLASSES.iter().enumerate() {
        let mut row = vec![truth.name().to_string()];
        row.extend((0..Part::CLASSES.len()).map(|k| confusion.get(t, k).to_string()));
        rows.push(row);
    }
    let mut header = vec!["truth"];
    header.extend(Part::CLASSES.iter().map(|p| p.name()));
    write_csv(&args.out_dir.join("confusion.csv"), &header, rows)?;

    let report = EvaluateReport {
        frames,
        confusion,
        recalls,
        uar,
        accuracy,
        parts,
        map,
    };
    crate::write_text(&args.out_dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!("frames: {frames}");
    println!("UAR: {uar:.4}  accuracy: {accuracy:.4}");
    for r in &report.parts {
        println!("{}: AP {}  EER threshold {}", r.part, opt(r.ap), opt(r.eer_threshold));
    }
    println!("mAP: {map:.4}");
    write_run_record(
        &args.out_dir.join(RUN_FILE),
        seed,
        Command::Evaluate(args.clone()),
        serde_json::json!({ "proposals": config, "deltas": args.scoring.deltas()?, "absent_rule": args.scoring.rule() }),
    )?;
    Ok(report)
}
