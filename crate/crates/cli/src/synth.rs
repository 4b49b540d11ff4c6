use std::path::PathBuf;

use handtrack_core::dataset::generate_trial;
use handtrack_core::derive_seed;
use handtrack_core::synth::{Camera, ScriptConfig, Template};
use handtrack_core::CameraIntrinsics;

use crate::{create_dir, write_run_record, CliError, Command, Result, SynthArgs, RUN_FILE};

fn template_for(spec: &str, trial_seed: u64) -> Result<Template> {
    match spec {
        "canonical" => Ok(Template::canonical()),
        "varied" => Ok(Template::varied(trial_seed)),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let t: Template = serde_json::from_str(&text)?;
            t.validate()?;
            Ok(t)
        }
    }
}

/// Writes `count` trials as `out_dir/trial_NNN`; returns their directories.
pub fn cmd_synth(args: &SynthArgs, seed: u64) -> Result<Vec<PathBuf>> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if !(args.scale > 0.0 && args.scale <= 4.0) {
        return Err(CliError::Usage(format!("--scale {} out of range (0, 4]", args.scale)));
    }
    if !(args.noise_sigma >= 0.0) {
        return Err(CliError::Usage("--noise-sigma must be >= 0".into()));
    }
    let camera = Camera {
        intrinsics: CameraIntrinsics::default().scaled(args.scale),
        width: (640.0 * args.scale).round() as usize,
        height: (480.0 * args.scale).round() as usize,
    };
    let config = ScriptConfig {
        camera,
        ..ScriptConfig::default()
    };
    create_dir(&args.out_dir)?;
    let mut dirs = Vec::new();
    for i in 0..args.count {
        let trial_seed = derive_seed(seed, i);
        let template = template_for(&args.template, trial_seed)?;
        let id = format!("trial_{i:03}");
        let dir = args.out_dir.join(&id);
        let m = generate_trial(&dir, &id, &template, &config, args.noise_sigma, trial_seed)?;
        let done = m.intended_flags().iter().filter(|&&f| f).count();
        println!("{id}: {} frames, {done}/5 steps intended", m.frame_count);
        dirs.push(dir);
    }
    write_run_record(
        &args.out_dir.join(RUN_FILE),
        seed,
        Command::Synth(args.clone()),
        serde_json::json!({ "camera": camera }),
    )?;
    Ok(dirs)
}
