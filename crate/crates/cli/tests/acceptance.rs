//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use handtrack_cli::*;
use handtrack_core::activity::{Activity, ActivityState};
use handtrack_core::dataset::{load_labeled_images, Trial};
use handtrack_core::features::{generate_candidates, CandidatePool, BG_DEPTH};
use handtrack_core::forest::{
    best_split, classify_pixel, pixel_confusion, train_forest, DecisionForest, LabeledImage, TrainingConfig,
    TrainingSample,
};
use handtrack_core::imaging::{DepthImage, LabelImage, Part, NUM_CLASSES};
use handtrack_core::metrics::{f_beta, mean_average_precision, BinaryCounts};
use handtrack_core::proposals::{mean_shift, ClassifiedPixel, ProposalConfig};
use handtrack_core::WorldPoint;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> (bool, String) {
    ((got - want).abs() <= tol, format!("{name} {got:.5} (want {want} ± {tol})"))
}

// 1 --------------------------------------------------------------------

fn step_metrics() -> Outcome {
    let c = BinaryCounts::new(180, 1, 12, 12);
    let checks = [
        within("precision", c.precision().unwrap(), 0.994, 0.001),
        within("recall", c.recall().unwrap(), 0.938, 0.001),
        within("F1", f_beta(&c, 1.0).unwrap(), 0.965, 0.001),
    ];
    let detail = checks.iter().map(|(_, d)| d.as_str()).collect::<Vec<_>>().join(", ");
    check(checks.iter().all(|(ok, _)| *ok), detail)
}

// 2 --------------------------------------------------------------------

fn map_arithmetic() -> Outcome {
    let (ok, detail) = within("mAP", mean_average_precision(&[0.802, 0.805, 0.931]).unwrap(), 0.846, 0.0005);
    check(ok, detail)
}

// 3 --------------------------------------------------------------------

/// Depth image with bands of labels that depth features can separate.
fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LabeledImage {
    let mut depths = vec![0f32; w * h];
    let mut labels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if rng.random_bool(0.1) {
                continue;
            }
            let d: f32 = rng.random_range(0.8..3.0);
            depths[i] = d;
            let part = if d < 1.2 {
                Part::LeftHand
            } else if x < w / 4 {
                Part::RightHand
            } else if y < h / 4 {
                Part::Head
            } else {
                Part::Body
            };
            labels[i] = part.label();
        }
    }
    LabeledImage::new(DepthImage::new(w, h, depths).unwrap(), LabelImage::new(w, h, labels).unwrap()).unwrap()
}

fn bf_probe(img: &DepthImage, x: usize, y: usize, o: [f64; 2]) -> f64 {
    let d = img.get(x, y) as f64;
    let px = x as f64 + (o[0] / d).round();
    let py = y as f64 + (o[1] / d).round();
    if px < 0.0 || py < 0.0 || px >= img.width() as f64 || py >= img.height() as f64 {
        return BG_DEPTH as f64;
    }
    let v = img.get(px as usize, py as usize);
    if v > 0.0 {
        v as f64
    } else {
        BG_DEPTH as f64
    }
}

fn bf_entropy(counts: &[usize; NUM_CLASSES]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

/// Exhaustive search: every candidate, every sample. Gains within 1e-12 of
/// the maximum count as ties and go to the lowest index.
fn brute_force_split(samples: &[TrainingSample], images: &[LabeledImage], pool: &CandidatePool) -> (usize, f64) {
    let mut gains = Vec::with_capacity(pool.len());
    let mut parent = [0usize; NUM_CLASSES];
    for s in samples {
        parent[s.label.class_index()] += 1;
    }
    for i in 0..pool.len() {
        let c = pool.get(i);
        let (mut left, mut right) = ([0usize; NUM_CLASSES], [0usize; NUM_CLASSES]);
        for s in samples {
            let img = &images[s.image as usize].depth;
            let (x, y) = (s.x as usize, s.y as usize);
            let f = bf_probe(img, x, y, c.offsets.u) - bf_probe(img, x, y, c.offsets.v);
            let side = if f < c.tau { &mut left } else { &mut right };
            side[s.label.class_index()] += 1;
        }
        let n = samples.len() as f64;
        let nl = left.iter().sum::<usize>() as f64;
        let nr = right.iter().sum::<usize>() as f64;
        gains.push(bf_entropy(&parent) - nl / n * bf_entropy(&left) - nr / n * bf_entropy(&right));
    }
    let max = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let index = gains.iter().position(|&g| g >= max - 1e-12).unwrap();
    (index, gains[index])
}

fn split_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let instances = 25;
    let mut mismatches = Vec::new();
    for inst in 0..instances {
        let images: Vec<LabeledImage> = (0..3).map(|_| random_image(&mut rng, 48, 36)).collect();
        let n: usize = rng.random_range(20..=500);
        let mut samples = Vec::new();
        while samples.len() < n {
            let i = rng.random_range(0..images.len());
            let (x, y) = (rng.random_range(0..48u16), rng.random_range(0..36u16));
            let img = &images[i];
            if img.depth.get(x as usize, y as usize) > 0.0 {
                samples.push(TrainingSample::new(&images, i, x, y, img.class_at(x as usize, y as usize)).unwrap());
            }
        }
        let no = rng.random_range(1..=20);
        let nt = rng.random_range(1..=10);
        let mut pool = generate_candidates(no, nt, 30.0, 1.5, rng.random()).unwrap();
        if inst % 3 == 0 {
            // coarse thresholds: many candidates share a partition
            for t in &mut pool.thresholds {
                *t = (*t * 2.0).round() / 2.0;
            }
        }
        let got = best_split(&samples, &images, &pool).unwrap();
        let (index, gain) = brute_force_split(&samples, &images, &pool);
        if got.index != index || (got.gain - gain).abs() > 1e-12 {
            mismatches.push(format!("#{inst}: {} vs {}", got.index, index));
        }
    }
    check(
        mismatches.is_empty(),
        format!("{instances} instances, {} mismatches {mismatches:?}", mismatches.len()),
    )
}

// 4 --------------------------------------------------------------------

fn mean_shift_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = ProposalConfig::default();
    let part = Part::LeftHand;
    let h = config.bandwidth.get(part);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut pixels = Vec::new();
        for _ in 0..3 {
            let mean = [
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                rng.random_range(1.8..2.1),
            ];
            let sigma = rng.random_range(0.02..0.05);
            let count = rng.random_range(100..300);
            let normal = Normal::new(0.0, sigma).unwrap();
            for _ in 0..count {
                let p = WorldPoint::new(
                    mean[0] + normal.sample(&mut rng),
                    mean[1] + normal.sample(&mut rng),
                    mean[2] + normal.sample(&mut rng),
                );
                let mut pdf = [0.0; NUM_CLASSES];
                pdf[part.class_index()] = rng.random_range(0.7..1.0);
                pdf[Part::Body.class_index()] = 1.0 - pdf[part.class_index()];
                pixels.push(ClassifiedPixel {
                    world: p,
                    pdf,
                    depth: p.z,
                });
            }
        }
        let seeds: Vec<WorldPoint> = pixels.iter().map(|p| p.world).collect();
        let top = mean_shift(&seeds, &pixels, part, &config).unwrap()[0].position;

        // weighted KDE on a 1 cm grid over the bounding box
        let weights: Vec<(WorldPoint, f64)> = pixels
            .iter()
            .map(|p| (p.world, p.pdf[part.class_index()] * p.depth * p.depth))
            .collect();
        let lo = |f: fn(&WorldPoint) -> f64| weights.iter().map(|(p, _)| f(p)).fold(f64::INFINITY, f64::min);
        let hi = |f: fn(&WorldPoint) -> f64| weights.iter().map(|(p, _)| f(p)).fold(f64::NEG_INFINITY, f64::max);
        let axes: [fn(&WorldPoint) -> f64; 3] = [|p| p.x, |p| p.y, |p| p.z];
        let ticks: Vec<Vec<f64>> = axes
            .iter()
            .map(|&f| {
                let (a, b) = (lo(f), hi(f));
                (0..=((b - a) / 0.01).ceil() as usize).map(|i| a + i as f64 * 0.01).collect()
            })
            .collect();
        let mut best = (f64::NEG_INFINITY, WorldPoint::new(0.0, 0.0, 0.0));
        for &x in &ticks[0] {
            for &y in &ticks[1] {
                for &z in &ticks[2] {
                    let g = WorldPoint::new(x, y, z);
                    let density: f64 = weights
                        .iter()
                        .map(|(p, w)| w * (-g.distance_squared(p) / (h * h)).exp())
                        .sum();
                    if density > best.0 {
                        best = (density, g);
                    }
                }
            }
        }
        worst = worst.max(top.distance(&best.1));
    }
    check(
        worst <= h / 2.0,
        format!("largest distance to grid argmax {:.4} m (limit {:.3} m)", worst, h / 2.0),
    )
}

// 5, 6, 7, 8 ------------------------------------------------------------

struct Data {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: PathBuf,
    holdout: PathBuf,
}

fn synth(out_dir: &Path, count: u64, template: &str, seed: u64) -> Vec<PathBuf> {
    cmd_synth(
        &SynthArgs {
            out_dir: out_dir.to_path_buf(),
            count,
            template: template.into(),
            noise_sigma: handtrack_core::synth::DEFAULT_NOISE_SIGMA,
            scale: 1.0,
        },
        seed,
    )
    .unwrap()
}

fn data() -> Data {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let train = root.join("train");
    let holdout = root.join("holdout");
    synth(&train, 3, "canonical", 11);
    synth(&holdout, 2, "varied", 12);
    Data {
        _dir: dir,
        root,
        train,
        holdout,
    }
}

/// Optimal settings with a reduced candidate pool.
fn acceptance_config() -> TrainingConfig {
    TrainingConfig {
        count_offsets: 300,
        count_thresholds: 100,
        rng_seed: 5,
        ..TrainingConfig::optimal()
    }
}

fn end_to_end_training(d: &Data, model: &Path) -> (Outcome, Option<(DecisionForest, Vec<LabeledImage>)>) {
    let config = acceptance_config();
    let images = load_labeled_images(&expand_trials(&[d.train.clone()]).unwrap()).unwrap();
    let holdout = load_labeled_images(&expand_trials(&[d.holdout.clone()]).unwrap()).unwrap();
    let start = Instant::now();
    let forest = train_forest(&images, &config).unwrap().forest;
    let secs = start.elapsed().as_secs_f64();
    std::fs::write(model, forest.to_json().unwrap()).unwrap();
    let cm = pixel_confusion(&forest, &holdout);
    let uar = cm.uar().unwrap();
    let recalls: Vec<String> = cm
        .recalls()
        .iter()
        .map(|r| r.map_or("-".into(), |r| format!("{r:.3}")))
        .collect();
    let outcome = check(
        images.len() >= 200 && uar >= 0.85,
        format!(
            "UAR {uar:.4} (>= 0.85) on {} holdout frames; {} training frames, recalls [{}], pool {}x{}, {secs:.0}s",
            holdout.len(),
            images.len(),
            recalls.join(", "),
            config.count_offsets,
            config.count_thresholds
        ),
    );
    (outcome, Some((forest, holdout)))
}

fn determinism(d: &Data, trained: Option<&(DecisionForest, Vec<LabeledImage>)>) -> Outcome {
    let train = |name: &str| {
        let out = d.root.join(name);
        cmd_train(
            &TrainArgs {
                data: vec![d.train.clone()],
                out: out.clone(),
                training: TrainingFlags {
                    optimal: true,
                    trees: Some(2),
                    offsets: Some(100),
                    thresholds: Some(20),
                    samples_per_image: Some(1000),
                    ..TrainingFlags::default()
                },
            },
            8,
        )
        .unwrap();
        std::fs::read(out).unwrap()
    };
    let identical = train("det_a.json") == train("det_b.json");

    let Some((forest, holdout)) = trained else {
        return Err("no trained forest to round-trip".into());
    };
    let restored = DecisionForest::from_json(&forest.to_json().unwrap()).unwrap();
    let mut pixels = 0usize;
    let mut differing = 0usize;
    for img in holdout {
        for (x, y) in img.depth.valid_pixels() {
            let (x, y) = (x as usize, y as usize);
            pixels += 1;
            if classify_pixel(forest, &img.depth, x, y).unwrap() != classify_pixel(&restored, &img.depth, x, y).unwrap() {
                differing += 1;
            }
        }
    }
    check(
        identical && differing == 0 && restored == *forest,
        format!("repeated training byte-identical: {identical}; round trip: {differing} of {pixels} pixel outputs differ"),
    )
}

fn task_tracking(d: &Data, model: &Path) -> Outcome {
    let trials_dir = d.root.join("tracking");
    let dirs = synth(&trials_dir, 20, "varied", 13);
    let omissions: usize = dirs
        .iter()
        .map(|t| {
            let m = Trial::open(t).unwrap().manifest;
            m.intended_flags().iter().filter(|f| !**f).count()
        })
        .sum();
    let report = cmd_track(
        &TrackArgs {
            model: model.to_path_buf(),
            trials: vec![trials_dir],
            out_dir: d.root.join("track_out"),
            regions: None,
            ordering: None,
            proposals: ProposalFlags {
                samples: 2000,
                bandwidth_hand: 0.05,
                bandwidth_head: 0.10,
                merge_radius: 0.01,
                max_seeds: 500,
                unweighted_denominator: false,
            },
            scoring: ScoringFlags {
                delta_hand: 0.05,
                delta_head: 0.10,
                absent_as_false_positive: false,
            },
        },
        6,
    )
    .unwrap();
    let f1 = report.f1.unwrap_or(0.0);
    let t = report.total;
    check(
        f1 >= 0.95,
        format!(
            "step F1 {f1:.4} (>= 0.95) over {} trials with {omissions} omitted steps; tp {} fp {} tn {} fn {}",
            report.trials.len(),
            t.tp,
            t.fp,
            t.tn,
            t.fn_
        ),
    )
}

fn image_count_sweep(d: &Data) -> Outcome {
    let rows = cmd_sweep(
        &SweepArgs {
            param: SweepParam::ImageFraction,
            values: vec![0.25, 0.5, 1.0],
            data: vec![d.train.clone()],
            holdout: vec![d.holdout.clone()],
            out: d.root.join("sweep.csv"),
            training: TrainingFlags {
                optimal: true,
                offsets: Some(100),
                thresholds: Some(20),
                ..TrainingFlags::default()
            },
        },
        7,
    )
    .unwrap();
    let uars: Vec<f64> = rows.iter().map(|r| r.uar).collect();
    let ok = uars.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let shown: Vec<String> = rows.iter().map(|r| format!("{}: {:.4}", r.param_value, r.uar)).collect();
    check(ok, format!("UAR by image fraction [{}] (non-decreasing ± 0.02)", shown.join(", ")))
}

// 9 --------------------------------------------------------------------

fn persistence_rule() -> Outcome {
    const SYMBOLS: [Activity; 3] = [Activity::Away, Activity::Soap, Activity::Tap];
    let decode = |mut code: usize, len: usize| -> Vec<Activity> {
        (0..len)
            .map(|_| {
                let s = SYMBOLS[code % 3];
                code /= 3;
                s
            })
            .collect()
    };
    // activation exactly when a run of one region reaches its 3rd frame
    let fires = |s: &[Activity], i: usize| -> bool {
        s[i] != Activity::Away && i >= 2 && s[i - 1] == s[i] && s[i - 2] == s[i] && (i < 3 || s[i - 3] != s[i])
    };
    let active = |s: &[Activity], i: usize| -> Activity {
        if i >= 2 && s[i] != Activity::Away && s[i - 1] == s[i] && s[i - 2] == s[i] {
            s[i]
        } else {
            Activity::Away
        }
    };
    let mut cases = 0usize;
    let mut failures = 0usize;
    for len in 1..=6 {
        let n = 3usize.pow(len as u32);
        for a in 0..n {
            let left = decode(a, len);
            for b in 0..n {
                let right = decode(b, len);
                let mut state = ActivityState::new();
                cases += 1;
                for i in 0..len {
                    let got = state.update_located([left[i], right[i]]);
                    let mut want = Vec::new();
                    if fires(&left, i) {
                        want.push(left[i]);
                    }
                    if fires(&right, i) && !want.contains(&right[i]) {
                        want.push(right[i]);
                    }
                    if got.activated != want || got.active != [active(&left, i), active(&right, i)] {
                        failures += 1;
                        break;
                    }
                }
            }
        }
    }
    check(
        failures == 0,
        format!("{cases} two-hand sequences of length <= 6, {failures} disagree with the rule"),
    )
}

// -----------------------------------------------------------------------

fn run(results: &mut Vec<bool>, n: usize, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} {tag} [{name}] {detail} ({secs:.1}s)");
    results.push(outcome.is_ok());
}

fn main() {
    let mut results = Vec::new();
    run(&mut results, 1, "step metric arithmetic", step_metrics);
    run(&mut results, 2, "mAP arithmetic", map_arithmetic);
    run(&mut results, 3, "split selection vs brute force", split_oracle);
    run(&mut results, 4, "mean shift vs grid KDE argmax", mean_shift_oracle);

    let d = data();
    let model = d.root.join("model.json");
    let mut trained = None;
    run(&mut results, 5, "synthetic end-to-end training", || {
        let (outcome, t) = end_to_end_training(&d, &model);
        trained = t;
        outcome
    });
    run(&mut results, 6, "synthetic task tracking", || task_tracking(&d, &model));
    run(&mut results, 7, "image-count sweep trend", || image_count_sweep(&d));
    run(&mut results, 8, "determinism", || determinism(&d, trained.as_ref()));
    run(&mut results, 9, "persistence rule", persistence_rule);

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
