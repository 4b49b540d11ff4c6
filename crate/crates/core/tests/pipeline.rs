//! Library pieces working together through files.

use handtrack_core::activity::{RegionSet, StepOrdering, TrialTracker};
use handtrack_core::dataset::{generate_trial, load_labeled_images, Trial};
use handtrack_core::forest::{classify_pixel, pixel_confusion, train_forest, DecisionForest, TrainingConfig};
use handtrack_core::imaging::Part;
use handtrack_core::pgm;
use handtrack_core::synth::{default_regions, Camera, ScriptConfig, Template};
use handtrack_core::CameraIntrinsics;

fn small_config() -> ScriptConfig {
    ScriptConfig {
        camera: Camera {
            intrinsics: CameraIntrinsics::default().scaled(0.25),
            width: 160,
            height: 120,
        },
        ..ScriptConfig::default()
    }
}

#[test]
fn trial_on_disk_matches_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_trial(dir.path(), "t", &Template::canonical(), &small_config(), 0.003, 4).unwrap();
    let trial = Trial::open(dir.path()).unwrap();
    assert_eq!(trial.manifest, m);
    assert_eq!(trial.len(), m.frame_count);
    for i in [0, trial.len() / 2, trial.len() - 1] {
        let raw = trial.raw_depth(i).unwrap();
        assert_eq!((raw.width(), raw.height()), (160, 120));
        // depths survive the millimeter PGM exactly
        let path = dir.path().join("copy.pgm");
        pgm::write_depth(&path, &raw).unwrap();
        assert_eq!(pgm::read_depth(&path).unwrap(), raw);

        let labeled = trial.labeled_image(i).unwrap();
        let fg = trial.foreground(i).unwrap();
        assert_eq!(labeled.depth, fg);
        for (x, y) in fg.valid_pixels() {
            assert_ne!(labeled.class_at(x as usize, y as usize), Part::Background);
        }
    }
}

#[test]
fn small_forest_learns_and_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let hold_dir = dir.path().join("hold");
    generate_trial(&train_dir, "a", &Template::canonical(), &small_config(), 0.003, 1).unwrap();
    generate_trial(&hold_dir, "b", &Template::varied(2), &small_config(), 0.003, 2).unwrap();
    let images = load_labeled_images(&[train_dir]).unwrap();
    let holdout = load_labeled_images(&[hold_dir]).unwrap();

    let config = TrainingConfig {
        n_trees: 2,
        max_depth: 10,
        samples_per_image: 300,
        theta_max: 60.0,
        count_offsets: 60,
        count_thresholds: 20,
        ..TrainingConfig::optimal()
    };
    let forest = train_forest(&images, &config).unwrap().forest;
    let uar = pixel_confusion(&forest, &holdout).uar().unwrap();
    assert!(uar > 0.5, "holdout UAR {uar}");

    let path = dir.path().join("model.json");
    forest.save(&path).unwrap();
    let loaded = DecisionForest::load(&path).unwrap();
    assert_eq!(loaded, forest);
    let img = &holdout[0].depth;
    for (x, y) in img.valid_pixels() {
        let (x, y) = (x as usize, y as usize);
        assert_eq!(classify_pixel(&loaded, img, x, y).unwrap(), classify_pixel(&forest, img, x, y).unwrap());
    }
}

#[test]
fn region_and_ordering_files() {
    let dir = tempfile::tempdir().unwrap();
    let regions = default_regions();
    let path = dir.path().join("regions.json");
    std::fs::write(&path, regions.to_json().unwrap()).unwrap();
    assert_eq!(RegionSet::load(&path).unwrap(), regions);

    let overlapping = r#"[
        {"activity": "soap", "center": [0, 0, 2], "radii": [0.1, 0.1, 0.1]},
        {"activity": "tap", "center": [0.15, 0, 2], "radii": [0.1, 0.1, 0.1]}
    ]"#;
    assert!(RegionSet::from_json(overlapping).is_err());

    let cyclic = r#"{"rinse_hands": ["dry_hands"], "dry_hands": ["rinse_hands"]}"#;
    assert!(StepOrdering::from_json(cyclic).is_err());
    let relaxed = StepOrdering::from_json(r#"{"dry_hands": []}"#).unwrap();
    assert!(relaxed.prerequisites(handtrack_core::activity::Step::RinseHands).is_empty());
}

#[test]
fn label_centers_walk_through_every_step() {
    let dir = tempfile::tempdir().unwrap();
    generate_trial(dir.path(), "t", &Template::canonical(), &small_config(), 0.0, 9).unwrap();
    let trial = Trial::open(dir.path()).unwrap();
    let regions = default_regions();
    let mut tracker = TrialTracker::new(&regions, StepOrdering::default());
    for f in &trial.manifest.frames {
        tracker.push([f.label_centers.left_hand, f.label_centers.right_hand]);
    }
    assert_eq!(tracker.flags(), trial.manifest.intended_flags());
}
