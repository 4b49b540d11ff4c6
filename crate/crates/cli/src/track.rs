use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use handtrack_core::activity::{trial_confusion, Action, RegionSet, Step, StepFlags, StepOrdering, TrialTracker};
use handtrack_core::dataset::Trial;
use handtrack_core::imaging::Part;
use handtrack_core::metrics::{category_part_table, f_beta, score_final, BinaryCounts, MeanScore};
use handtrack_core::proposals::{proposals_from_pixels, PartProposals};
use handtrack_core::synth::default_regions;

use crate::evaluate::{frame_pixels, frame_seed, load_model};
use crate::{create_dir, csv_writer, expand_trials, opt, write_run_record, write_text, CliError, Command, Result, TrackArgs, RUN_FILE};

/// Beta of the per-action part-localization score.
const PART_BETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSteps {
    pub trial_id: String,
    pub tracked: StepFlags,
    pub intended: StepFlags,
    pub counts: BinaryCounts,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionPartScore {
    pub action: Action,
    pub part: Part,
    pub score: MeanScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackReport {
    pub trials: Vec<TrialSteps>,
    pub total: BinaryCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub action_part: Vec<ActionPartScore>,
}

fn steps_cell(steps: &[Step]) -> String {
    steps.iter().map(|s| s.name()).collect::<Vec<_>>().join(";")
}

/// Runs proposals on every frame, feeds the final hand proposals through
/// the activity and step trackers, and scores steps against each trial's
/// intended steps.
pub fn cmd_track(args: &TrackArgs, seed: u64) -> Result<TrackReport> {
    let config = args.proposals.resolve()?;
    let deltas = args.scoring.deltas()?;
    let rule = args.scoring.rule();
    let regions = match &args.regions {
        Some(p) => RegionSet::load(p)?,
        None => default_regions(),
    };
    let ordering = match &args.ordering {
        Some(p) => StepOrdering::load(p)?,
        None => StepOrdering::default(),
    };
    let forest = load_model(&args.model)?;
    let dirs = expand_trials(&args.trials)?;
    create_dir(&args.out_dir)?;

    let mut trials = Vec::new();
    let mut part_scores: Vec<Vec<(Action, Part, BinaryCounts)>> = Vec::new();
    for (ti, dir) in dirs.iter().enumerate() {
        let trial = Trial::open(dir)?;
        let id = trial.manifest.trial_id.clone();
        let proposals: Vec<PartProposals> = (0..trial.len())
            .into_par_iter()
            .map(|i| {
                let pixels = frame_pixels(&forest, &trial, i, args.proposals.samples, frame_seed(seed, ti, i))?;
                Ok(proposals_from_pixels(&pixels, &config))
            })
            .collect::<Result<_>>()?;

        let mut tracker = TrialTracker::new(&regions, ordering.clone());
        let timeline_path = args.out_dir.join(format!("timeline_{id}.csv"));
        let mut w = csv_writer(&timeline_path)?;
        w.write_record(["frame", "left_activity", "right_activity", "steps_completed"])?;
        let mut scores = Vec::new();
        for (props, record) in proposals.iter().zip(&trial.manifest.frames) {
            let hand = |p: Part| props.final_proposal(p).map(|m| m.position);
            let row = tracker.push([hand(Part::LeftHand), hand(Part::RightHand)]);
            w.write_record([
                row.frame.to_string(),
                row.active[0].name().to_string(),
                row.active[1].name().to_string(),
                steps_cell(&row.completed),
            ])?;
            for part in Part::TRACKED {
                let c = score_final(hand(part).as_ref(), record.label_centers.get(part).as_ref(), deltas.get(part), rule);
                scores.push((record.action, part, c));
            }
        }
        w.flush().map_err(|e| CliError::io(&timeline_path, e))?;
        part_scores.push(scores);

        let tracked = tracker.flags();
        let intended = trial.manifest.intended_flags();
        let counts = trial_confusion(&tracked, &intended);
        let f1 = f_beta(&counts, 1.0).ok();
        println!("{id}: {} frames, steps F1 {}", trial.len(), opt(f1));
        trials.push(TrialSteps {
            trial_id: id,
            tracked,
            intended,
            counts,
            f1,
        });
    }

    let mut total = BinaryCounts::default();
    for t in &trials {
        total += t.counts;
    }
    let steps_path = args.out_dir.join("steps.csv");
    let mut w = csv_writer(&steps_path)?;
    w.write_record(["trial_id", "tp", "fp", "tn", "fn", "f1"])?;
    let rows = trials
        .iter()
        .map(|t| (t.trial_id.as_str(), t.counts, t.f1))
        .chain(std::iter::once(("all", total, f_beta(&total, 1.0).ok())));
    for (id, c, f1) in rows {
        w.write_record([
            id.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            opt(f1),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&steps_path, e))?;

    let table: BTreeMap<(Action, Part), MeanScore> = category_part_table(&part_scores, PART_BETA);
    let table_path = args.out_dir.join("action_part_f05.csv");
    let mut w = csv_writer(&table_path)?;
    let mut header = vec!["action"];
    header.extend(Part::TRACKED.iter().map(|p| p.name()));
    w.write_record(&header)?;
    for action in Action::ALL {
        let mut row = vec![action.name().to_string()];
        row.extend(
            Part::TRACKED
                .iter()
                .map(|&p| opt(table.get(&(action, p)).and_then(|s| s.mean))),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(&table_path, e))?;

    let report = TrackReport {
        precision: total.precision().ok(),
        recall: total.recall().ok(),
        f1: f_beta(&total, 1.0).ok(),
        total,
        trials,
        action_part: table
            .into_iter()
            .map(|((action, part), score)| ActionPartScore { action, part, score })
            .collect(),
    };
    write_text(&args.out_dir.join("summary.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!(
        "steps: precision {}  recall {}  F1 {}",
        opt(report.precision),
        opt(report.recall),
        opt(report.f1)
    );
    write_run_record(
        &args.out_dir.join(RUN_FILE),
        seed,
        Command::Track(args.clone()),
        serde_json::json!({
            "proposals": config,
            "deltas": deltas,
            "absent_rule": rule,
            "regions": regions.regions(),
            "ordering": ordering,
        }),
    )?;
    Ok(report)
}
