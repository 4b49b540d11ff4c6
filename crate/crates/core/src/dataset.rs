//! Trials on disk: a directory of PGM rasters plus `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{Action, Activity, Step, StepFlags};
use crate::error::{Error, Result};
use crate::forest::LabeledImage;
use crate::imaging::{segment_foreground, CameraIntrinsics, DepthImage, LabelImage, WorldPoint};
use crate::pgm;
use crate::proposals::PerPart;
use crate::synth::{render_script, script_trial, Camera, RenderedFrame, SceneScript, ScriptConfig, Template, FLOOR_MARGIN};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Raw depth raster, relative to the trial directory.
    pub depth: String,
    /// Annotated labels: hands and head only.
    pub labels: String,
    pub action: Action,
    /// Ground-truth activity of the left and right hand.
    pub activity: [Activity; 2],
    /// Analytic part centers.
    pub centers: PerPart<Option<WorldPoint>>,
    /// Mean position of each part's labeled surface pixels.
    pub label_centers: PerPart<Option<WorldPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub trial_id: String,
    pub frame_count: usize,
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    /// Raw depths at or beyond this are background.
    pub background_threshold: f64,
    pub seed: u64,
    pub intended_activations: Vec<Activity>,
    pub intended_steps: BTreeMap<Step, bool>,
    pub frames: Vec<FrameRecord>,
}

impl TrialManifest {
    pub fn intended_flags(&self) -> StepFlags {
        Step::ALL.map(|s| self.intended_steps.get(&s).copied().unwrap_or(false))
    }

    pub fn camera(&self) -> Camera {
        Camera {
            intrinsics: self.intrinsics,
            width: self.width,
            height: self.height,
        }
    }
}

/// An opened trial directory.
#[derive(Debug, Clone)]
pub struct Trial {
    pub dir: PathBuf,
    pub manifest: TrialManifest,
}

impl Trial {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: TrialManifest = serde_json::from_str(&text)?;
        if manifest.frames.is_empty() || manifest.frame_count != manifest.frames.len() {
            return Err(Error::Format {
                kind: "manifest",
                path,
                reason: format!(
                    "frame_count {} with {} frame records",
                    manifest.frame_count,
                    manifest.frames.len()
                ),
            });
        }
        Ok(Trial { dir, manifest })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn raw_depth(&self, frame: usize) -> Result<DepthImage> {
        pgm::read_depth(self.dir.join(&self.manifest.frames[frame].depth))
    }

    /// Depth with the floor removed.
    pub fn foreground(&self, frame: usize) -> Result<DepthImage> {
        segment_foreground(&self.raw_depth(frame)?, self.manifest.background_threshold as f32)
    }

    pub fn labels(&self, frame: usize) -> Result<LabelImage> {
        pgm::read_labels(self.dir.join(&self.manifest.frames[frame].labels))
    }

    pub fn labeled_image(&self, frame: usize) -> Result<LabeledImage> {
        let depth = self.foreground(frame)?;
        let labels = self.labels(frame)?;
        labels.check_consistent(&depth)?;
        LabeledImage::new(depth, labels)
    }

    pub fn labeled_images(&self) -> Result<Vec<LabeledImage>> {
        (0..self.len()).into_par_iter().map(|i| self.labeled_image(i)).collect()
    }
}

/// Every labeled frame of every trial, in order.
pub fn load_labeled_images(dirs: &[PathBuf]) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::new();
    for d in dirs {
        out.extend(Trial::open(d)?.labeled_images()?);
    }
    Ok(out)
}

/// Writes rendered frames and the manifest into `dir`, creating it.
pub fn write_trial(
    dir: impl AsRef<Path>,
    trial_id: &str,
    script: &SceneScript,
    frames: &[RenderedFrame],
    camera: &Camera,
    seed: u64,
) -> Result<TrialManifest> {
    let dir = dir.as_ref();
    if frames.is_empty() || frames.len() != script.frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} rendered frames for a {}-frame script",
            frames.len(),
            script.frames.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let floor = script.frames[0].floor_depth;
    let mut records = Vec::with_capacity(frames.len());
    for (i, (pose, r)) in script.frames.iter().zip(frames).enumerate() {
        let depth = format!("depth_{i:04}.pgm");
        let labels = format!("labels_{i:04}.pgm");
        pgm::write_depth(dir.join(&depth), &r.depth)?;
        pgm::write_labels(dir.join(&labels), &r.partial_labels())?;
        records.push(FrameRecord {
            depth,
            labels,
            action: pose.action,
            activity: pose.activity,
            centers: r.centers,
            label_centers: r.label_centers,
        });
    }
    let manifest = TrialManifest {
        trial_id: trial_id.to_string(),
        frame_count: records.len(),
        intrinsics: camera.intrinsics,
        width: camera.width,
        height: camera.height,
        background_threshold: floor - FLOOR_MARGIN,
        seed,
        intended_activations: script.intended_activations.clone(),
        intended_steps: Step::ALL.into_iter().zip(script.intended_steps).collect(),
        frames: records,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Scripts, renders and writes one trial.
pub fn generate_trial(
    dir: impl AsRef<Path>,
    trial_id: &str,
    template: &Template,
    config: &ScriptConfig,
    noise_sigma: f64,
    seed: u64,
) -> Result<TrialManifest> {
    let script = script_trial(template, config, seed)?;
    let frames = render_script(&script, &config.camera, noise_sigma, crate::derive_seed(seed, 1))?;
    write_trial(dir, trial_id, &script, &frames, &config.camera, seed)
}
