use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::OnceLock;

use handtrack_cli::*;
use handtrack_core::dataset::Trial;
use handtrack_core::forest::TrainingConfig;

/// Small trials and a small model shared by the tests in this file.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: PathBuf,
    holdout: PathBuf,
    model: PathBuf,
}

fn small_training() -> TrainingFlags {
    TrainingFlags {
        trees: Some(1),
        max_depth: Some(8),
        samples_per_image: Some(200),
        offsets: Some(30),
        thresholds: Some(8),
        ..TrainingFlags::default()
    }
}

fn synth_args(out_dir: &Path, count: u64, template: &str) -> SynthArgs {
    SynthArgs {
        out_dir: out_dir.to_path_buf(),
        count,
        template: template.into(),
        noise_sigma: 0.003,
        scale: 0.25,
    }
}

fn proposal_flags() -> ProposalFlags {
    ProposalFlags {
        samples: 150,
        bandwidth_hand: 0.05,
        bandwidth_head: 0.10,
        merge_radius: 0.01,
        max_seeds: 100,
        unweighted_denominator: false,
    }
}

fn scoring_flags() -> ScoringFlags {
    ScoringFlags {
        delta_hand: 0.05,
        delta_head: 0.10,
        absent_as_false_positive: false,
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let train = root.join("train");
        let holdout = root.join("holdout");
        cmd_synth(&synth_args(&train, 2, "canonical"), 1).unwrap();
        cmd_synth(&synth_args(&holdout, 1, "varied"), 2).unwrap();
        let model = root.join("model.json");
        cmd_train(
            &TrainArgs {
                data: vec![train.clone()],
                out: model.clone(),
                training: small_training(),
            },
            3,
        )
        .unwrap();
        Fixture {
            _dir: dir,
            root,
            train,
            holdout,
            model,
        }
    })
}

fn handtrack(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_handtrack")).args(args).output().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn synth_rejects_zero_count() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_synth(&synth_args(dir.path(), 0, "canonical"), 0).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let out = handtrack(&["synth", "--out-dir", dir.path().to_str().unwrap(), "--count", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn canonical_trials_intend_every_step() {
    let f = fixture();
    for dir in expand_trials(&[f.train.clone()]).unwrap() {
        let trial = Trial::open(&dir).unwrap();
        assert_eq!(trial.manifest.intended_flags(), [true; 5]);
        assert_eq!(trial.manifest.width, 160);
    }
}

#[test]
fn training_flags_fill_from_presets() {
    let d = TrainingFlags::default().resolve(9).unwrap();
    assert_eq!(
        d,
        TrainingConfig {
            rng_seed: 9,
            ..TrainingConfig::default()
        }
    );
    let o = TrainingFlags {
        optimal: true,
        ..TrainingFlags::default()
    }
    .resolve(9)
    .unwrap();
    assert_eq!(
        o,
        TrainingConfig {
            rng_seed: 9,
            ..TrainingConfig::optimal()
        }
    );
    let custom = TrainingFlags {
        optimal: true,
        trees: Some(2),
        ..TrainingFlags::default()
    }
    .resolve(0)
    .unwrap();
    assert_eq!(custom.n_trees, 2);
    assert_eq!(custom.max_depth, TrainingConfig::optimal().max_depth);
    let bad = TrainingFlags {
        trees: Some(0),
        ..TrainingFlags::default()
    };
    assert_eq!(bad.resolve(0).unwrap_err().exit_code(), 1);
}

#[test]
fn training_records_resolved_config() {
    let f = fixture();
    let record: RunRecord = serde_json::from_str(&read(&sidecar_run_path(&f.model))).unwrap();
    assert_eq!(record.seed, 3);
    let config: TrainingConfig = serde_json::from_value(record.resolved["config"].clone()).unwrap();
    assert_eq!(config, small_training().resolve(3).unwrap());
}

#[test]
fn same_seed_same_model() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let train = |seed: u64, name: &str| {
        let out = dir.path().join(name);
        cmd_train(
            &TrainArgs {
                data: vec![f.train.clone()],
                out: out.clone(),
                training: small_training(),
            },
            seed,
        )
        .unwrap();
        std::fs::read(out).unwrap()
    };
    let a = train(3, "a.json");
    assert_eq!(a, std::fs::read(&f.model).unwrap());
    assert_ne!(a, train(4, "b.json"));
}

#[test]
fn evaluate_writes_curves_and_map() {
    let f = fixture();
    let out = f.root.join("eval");
    let report = cmd_evaluate(
        &EvaluateArgs {
            model: f.model.clone(),
            holdout: vec![f.holdout.clone()],
            out_dir: out.clone(),
            grid: 101,
            proposals: proposal_flags(),
            scoring: scoring_flags(),
        },
        0,
    )
    .unwrap();
    assert!(report.uar > 0.0 && report.uar <= 1.0);
    for part in ["left_hand", "right_hand", "head"] {
        let text = read(&out.join(format!("pr_{part}.csv")));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "threshold,precision,recall");
        assert_eq!(lines.len(), 102);
    }
    let mut rdr = csv::Reader::from_path(out.join("ap.csv")).unwrap();
    let aps: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[1].parse::<f64>().unwrap())
        .collect();
    assert_eq!(aps.len(), 3);
    let mean = aps.iter().sum::<f64>() / 3.0;
    assert!((report.map - mean).abs() < 1e-12);
    assert!(out.join("report.json").is_file() && out.join("confusion.csv").is_file());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let f = fixture();
    let out = f.root.join("sweep_depth.csv");
    let rows = cmd_sweep(
        &SweepArgs {
            param: SweepParam::MaxDepth,
            values: vec![2.0, 4.0, 6.0],
            data: vec![f.train.clone()],
            holdout: vec![f.holdout.clone()],
            out: out.clone(),
            training: small_training(),
        },
        0,
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    let text = read(&out);
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("param_value,uar\n"));
    assert!(sidecar_run_path(&out).is_file());

    let bad = SweepArgs {
        param: SweepParam::Trees,
        values: vec![1.5],
        data: vec![f.train.clone()],
        holdout: vec![f.holdout.clone()],
        out: f.root.join("never.csv"),
        training: small_training(),
    };
    assert_eq!(cmd_sweep(&bad, 0).unwrap_err().exit_code(), 1);
}

#[test]
fn track_writes_timeline_and_scores() {
    let f = fixture();
    let out = f.root.join("track");
    let report = cmd_track(
        &TrackArgs {
            model: f.model.clone(),
            trials: vec![f.holdout.clone()],
            out_dir: out.clone(),
            regions: None,
            ordering: None,
            proposals: proposal_flags(),
            scoring: scoring_flags(),
        },
        0,
    )
    .unwrap();
    let trial = Trial::open(&expand_trials(&[f.holdout.clone()]).unwrap()[0]).unwrap();
    let id = &trial.manifest.trial_id;
    let timeline = read(&out.join(format!("timeline_{id}.csv")));
    assert_eq!(timeline.lines().count(), trial.len() + 1);
    assert!(timeline.starts_with("frame,left_activity,right_activity,steps_completed\n"));
    let steps = read(&out.join("steps.csv"));
    assert_eq!(steps.lines().count(), 3);
    assert!(steps.lines().last().unwrap().starts_with("all,"));
    assert_eq!(report.total.total(), 5);
    let table = read(&out.join("action_part_f05.csv"));
    assert_eq!(table.lines().next().unwrap(), "action,left_hand,right_hand,head");
    assert_eq!(table.lines().count(), 5);
    assert!(out.join("summary.json").is_file());
}

#[test]
fn empty_trial_directory_is_a_data_error() {
    let f = fixture();
    let empty = tempfile::tempdir().unwrap();
    let err = cmd_train(
        &TrainArgs {
            data: vec![empty.path().to_path_buf()],
            out: empty.path().join("m.json"),
            training: small_training(),
        },
        0,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let out = handtrack(&[
        "track",
        "--model",
        f.model.to_str().unwrap(),
        "--trials",
        empty.path().to_str().unwrap(),
        "--out-dir",
        empty.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(handtrack(&["--help"]).status.code(), Some(0));
    assert_eq!(handtrack(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(handtrack(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = handtrack(&[
        "classify",
        "--model",
        dir.path().join("none.json").to_str().unwrap(),
        "--depth",
        dir.path().join("none.pgm").to_str().unwrap(),
        "--out",
        dir.path().join("o.pgm").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(main_with_args(["handtrack", "--threads", "0", "rerun", "x"]), 1);
}

#[test]
fn rerun_reproduces_outputs() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let args = ProposeArgs {
        model: f.model.clone(),
        trial: expand_trials(&[f.holdout.clone()]).unwrap()[0].clone(),
        out_dir: first.clone(),
        proposals: proposal_flags(),
    };
    cmd_propose(&args, 17).unwrap();
    let before = std::fs::read(first.join("proposals.csv")).unwrap();
    assert!(before.starts_with(b"frame,part,rank,x,y,z,confidence\n"));
    std::fs::remove_file(first.join("proposals.csv")).unwrap();
    let code = handtrack(&["rerun", first.join(RUN_FILE).to_str().unwrap()]).status.code();
    assert_eq!(code, Some(0));
    assert_eq!(std::fs::read(first.join("proposals.csv")).unwrap(), before);

    // the model too, through the binary
    let model = dir.path().join("m.json");
    let out = handtrack(&[
        "--seed",
        "5",
        "train",
        "--data",
        f.train.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--trees",
        "1",
        "--max-depth",
        "6",
        "--samples-per-image",
        "100",
        "--offsets",
        "20",
        "--thresholds",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&model).unwrap();
    std::fs::remove_file(&model).unwrap();
    assert_eq!(main_with_args(["handtrack", "rerun", sidecar_run_path(&model).to_str().unwrap()]), 0);
    assert_eq!(std::fs::read(&model).unwrap(), bytes);
}

#[test]
fn classify_matches_stored_labels_shape() {
    let f = fixture();
    let trial = Trial::open(&expand_trials(&[f.holdout.clone()]).unwrap()[0]).unwrap();
    let depth = trial.dir.join(&trial.manifest.frames[0].depth);
    let out = f.root.join("classified.pgm");
    cmd_classify(
        &ClassifyArgs {
            model: f.model.clone(),
            depth,
            out: out.clone(),
            background_threshold: Some(trial.manifest.background_threshold),
        },
        0,
    )
    .unwrap();
    let labels = handtrack_core::pgm::read_labels(&out).unwrap();
    assert_eq!((labels.width(), labels.height()), (trial.manifest.width, trial.manifest.height));
}
