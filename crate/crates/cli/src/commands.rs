use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dexfit_core::autodiff::gradcheck;
use dexfit_core::biomech::{filter_body_frame, rectify_hand_frame, RomTable, SignerSpace};
use dexfit_core::body_model::{generate, PoseParams, ProceduralConfig, SkeletonTemplate};
use dexfit_core::eval::{evaluate_poses, load_poses, perturb_pose, synth_sequence, write_json, CameraFile, KeypointsFile, PosesFile, SynthConfig};
use dexfit_core::fitting::{fit_sequence, CollisionProxies, FitProblem, FitWeights, Priors};
use dexfit_core::priors::{mirror_hand, recon_mpjpe, train_with, PriorConfig, PriorKind, PriorModel};
use dexfit_core::rotations::AxisAngle;
use dexfit_core::Error;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{EvalArgs, FilterArgs, FitArgs, GradcheckArgs, RectifyArgs, SynthArgs, TrainArgs};
use crate::Failure;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

type Outcome = std::result::Result<(), Failure>;

/// Shared inputs every command may need.
pub struct Context {
    pub template: Option<PathBuf>,
    pub rom: Option<PathBuf>,
}

impl Context {
    fn template(&self) -> Result<SkeletonTemplate, Failure> {
        Ok(match &self.template {
            Some(path) => SkeletonTemplate::load(path)?,
            None => generate(&ProceduralConfig::default())?,
        })
    }

    fn rom(&self) -> Result<RomTable, Failure> {
        Ok(match &self.rom {
            Some(path) => RomTable::from_json(&read(path)?)?,
            None => RomTable::default_table(),
        })
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Applies the keys of a JSON object file on top of `base`.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> Result<T, Failure> {
    let mut value = serde_json::to_value(base).map_err(Error::from)?;
    let patch: Value = serde_json::from_str(&read(path)?).map_err(Error::from)?;
    let Value::Object(fields) = patch else {
        return Err(Failure::input(format!("{} must hold a JSON object", path.display())));
    };
    for (key, v) in fields {
        match value.get_mut(&key) {
            Some(slot) => *slot = v,
            None => return Err(Failure::input(format!("{}: unknown field `{key}`", path.display()))),
        }
    }
    Ok(serde_json::from_value(value).map_err(Error::from)?)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => write_json(path, value)?,
        None => {
            let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
            let mut stdout = std::io::stdout().lock();
            quiet_pipe(writeln!(stdout, "{text}").and_then(|_| stdout.flush()))?;
        }
    }
    Ok(())
}

/// A closed downstream pipe (e.g. `| head`) is not an error.
fn quiet_pipe(r: std::io::Result<()>) -> Outcome {
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::from(e).into()),
        _ => Ok(()),
    }
}

/// One compact JSON record per line.
fn emit_lines<T: Serialize>(records: &[T], out: Option<&Path>) -> Outcome {
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(File::create(path).map_err(Error::from)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    for r in records {
        let line = serde_json::to_string(r).map_err(Error::from)?;
        quiet_pipe(writeln!(sink, "{line}"))?;
    }
    quiet_pipe(sink.flush())
}

fn check_poses(poses: &[PoseParams], tpl: &SkeletonTemplate) -> Outcome {
    for (i, p) in poses.iter().enumerate() {
        if p.joint_count() != tpl.joint_count() {
            return Err(Failure::input(format!(
                "pose {i} has {} joints, template has {}",
                p.joint_count(),
                tpl.joint_count()
            )));
        }
        if !p.is_finite() {
            return Err(Failure::input(format!("pose {i} is not finite")));
        }
    }
    Ok(())
}

pub fn filter(ctx: &Context, args: &FilterArgs) -> Outcome {
    let tpl = ctx.template()?;
    let rom = ctx.rom()?;
    let space = match &args.signer_space {
        Some(path) => serde_json::from_str(&read(path)?).map_err(Error::from)?,
        None => SignerSpace::default(),
    };
    let poses = load_poses(&args.poses)?;
    check_poses(&poses, &tpl)?;
    let mut records = Vec::with_capacity(poses.len());
    for (frame, pose) in poses.iter().enumerate() {
        let outcome = filter_body_frame(pose, &rom, &space, &tpl)?;
        records.push(json!({ "frame": frame, "accepted": outcome.accepted, "violations": outcome.violations }));
    }
    let accepted = records.iter().filter(|r| r["accepted"] == true).count();
    info!("{accepted} of {} frames accepted", poses.len());
    emit_lines(&records, args.out.as_deref())
}

pub fn rectify(ctx: &Context, args: &RectifyArgs) -> Outcome {
    let tpl = ctx.template()?;
    let rom = ctx.rom()?;
    let mut poses = load_poses(&args.poses)?;
    check_poses(&poses, &tpl)?;
    let mut records = Vec::with_capacity(poses.len());
    for (frame, pose) in poses.iter_mut().enumerate() {
        let mut corrected = Vec::new();
        for (side, hand, entries) in [
            ("left", &mut pose.left_hand_pose, &rom.left_hand),
            ("right", &mut pose.right_hand_pose, &rom.right_hand),
        ] {
            let fixed = rectify_hand_frame(hand, entries)?;
            for (j, (a, b)) in hand.iter().zip(&fixed).enumerate() {
                if a != b {
                    corrected.push(json!({ "joint": format!("{side}_{}", entries[j].joint), "change": (a.0 - b.0).norm() }));
                }
            }
            *hand = fixed;
        }
        records.push(json!({ "frame": frame, "corrected": corrected }));
    }
    write_json(&args.out, &PosesFile::new(poses))?;
    info!("rectified poses written to {}", args.out.display());
    emit_lines(&records, None)
}

fn training_poses(poses: &[PoseParams], kind: PriorKind) -> Vec<Vec<AxisAngle>> {
    match kind {
        PriorKind::Body => poses.iter().map(|p| p.body_pose.clone()).collect(),
        PriorKind::Hand => poses
            .iter()
            .flat_map(|p| [p.right_hand_pose.clone(), mirror_hand(&p.left_hand_pose)])
            .collect(),
    }
}

pub fn train_prior(ctx: &Context, args: &TrainArgs) -> Outcome {
    let tpl = ctx.template()?;
    let rom = ctx.rom()?;
    let kind = PriorKind::from(args.kind);
    let mut config = PriorConfig::new(kind);
    if let Some(path) = &args.config {
        config = overlay(&config, path)?;
    }
    if config.kind != kind {
        return Err(Failure::input(format!("config is for a {} prior, --kind is {kind}", config.kind)));
    }
    config.steps = args.steps.unwrap_or(config.steps);
    config.hidden = args.hidden.unwrap_or(config.hidden);
    config.seed = args.seed.unwrap_or(config.seed);

    let data_poses = load_poses(&args.data)?;
    check_poses(&data_poses, &tpl)?;
    let data = training_poses(&data_poses, kind);
    let validation = match &args.validation {
        Some(path) => {
            let v = load_poses(path)?;
            check_poses(&v, &tpl)?;
            Some(training_poses(&v, kind))
        }
        None => None,
    };
    info!(
        "training {kind} prior on {} poses for {} steps (hidden {}, seed {})",
        data.len(),
        config.steps,
        config.hidden,
        config.seed
    );
    let every = (config.steps / 10).max(1);
    let mut log_step = |step: usize, terms: &dexfit_core::priors::LossTerms| {
        if step % every == 0 || step + 1 == config.steps {
            info!("step {step}: loss {:.5} (recon {:.5}, kl {:.5})", terms.total, terms.recon, terms.kl);
        }
    };
    let (model, report) = train_with(&config, &data, validation.as_deref(), &tpl, &rom, &mut log_step)?;
    model.save(&args.out)?;
    let recon = recon_mpjpe(&model, &data, &tpl)?;
    info!("model written to {}; training recon MPJPE {recon:.3} mm", args.out.display());
    let summary = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": kind,
        "model": args.out,
        "poses": data.len(),
        "steps": config.steps,
        "seed": config.seed,
        "final": report.curve.last(),
        "best_step": report.best_step,
        "validation": report.validation,
        "recon_mpjpe_mm": recon,
    });
    emit(&summary, args.report.as_deref())
}

pub fn fit(ctx: &Context, args: &FitArgs) -> Outcome {
    let tpl = ctx.template()?;
    let rom = ctx.rom()?;
    let keypoints = KeypointsFile::load(&args.keypoints)?;
    let inits = load_poses(&args.init)?;
    check_poses(&inits, &tpl)?;
    let camera = CameraFile::load(&args.camera)?.camera;
    let body = PriorModel::load(&args.body_prior)?;
    let hand = PriorModel::load(&args.hand_prior)?;
    let mut weights = FitWeights::default();
    if let Some(path) = &args.weights {
        weights = overlay(&weights, path)?;
    }
    weights.refine_arms |= args.refine_arms;
    if let Some(n) = args.max_iterations {
        weights.lbfgs.max_iterations = n;
    }
    let proxies = CollisionProxies::default_for(&tpl)?;
    let problem = FitProblem {
        tpl: &tpl,
        camera: &camera,
        priors: Priors { body: &body, hand: &hand },
        rom: &rom,
        proxies: &proxies,
        weights: &weights,
    };
    info!("fitting {} frames", keypoints.frames.len());
    let result = fit_sequence(problem, &keypoints.frames, &inits)?;
    for f in &result.frames {
        match &f.error {
            Some(e) => warn!("frame {}: failed: {e}", f.frame),
            None => info!(
                "frame {}: objective {:.4} -> {:.4} in {} iterations",
                f.frame,
                f.initial_objective.unwrap_or(f64::NAN),
                f.terms.map_or(f64::NAN, |t| t.objective),
                f.iterations
            ),
        }
    }
    emit(&result, args.out.as_deref())?;
    let failed = result.failures().count();
    if failed > 0 {
        return Err(Failure::numerical(format!("{failed} of {} frames failed", result.frames.len())));
    }
    Ok(())
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Outcome {
    let tpl = ctx.template()?;
    let pred = load_poses(&args.pred)?;
    let gt = load_poses(&args.gt)?;
    check_poses(&pred, &tpl)?;
    check_poses(&gt, &tpl)?;
    if pred.len() != gt.len() {
        return Err(Failure::input(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut report = evaluate_poses(&tpl, &pred, &gt, &args.regions)?;
    for (name, m) in &report.regions {
        info!("{name}: MPJPE {:.2} mm, MPVPE {:.2} mm, TR-V2V {:.2} mm", m.mpjpe, m.mpvpe, m.tr_v2v);
    }
    if args.summary {
        report.per_frame.clear();
    }
    emit(&report, args.out.as_deref())
}

pub fn gradcheck(args: &GradcheckArgs) -> Outcome {
    if args.samples == 0 {
        return Err(Failure::input("--samples must be positive"));
    }
    let reports = gradcheck::primitive_suite(args.samples, args.seed)?;
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !(r.max_relative_error < args.tolerance))
        .map(|r| r.primitive)
        .collect();
    for r in &reports {
        info!("{:<24} {:.2e}", r.primitive, r.max_relative_error);
    }
    let summary = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "samples": args.samples,
        "seed": args.seed,
        "tolerance": args.tolerance,
        "passed": failing.is_empty(),
        "primitives": reports,
    });
    emit(&summary, args.out.as_deref())?;
    if !failing.is_empty() {
        return Err(Failure::numerical(format!("over tolerance: {}", failing.join(", "))));
    }
    Ok(())
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Outcome {
    let tpl = ctx.template()?;
    let rom = ctx.rom()?;
    if !(args.init_noise >= 0.0) {
        return Err(Failure::input("--init-noise must be non-negative"));
    }
    let config = SynthConfig {
        frames: args.frames,
        handedness: args.handedness.into(),
        source: args.source.into(),
        pixel_noise: args.noise,
        confidence_attenuation: args.attenuation,
        dropout: args.dropout,
        ..SynthConfig::default()
    };
    let models = match (&args.body_prior, &args.hand_prior) {
        (Some(b), Some(h)) => Some((PriorModel::load(b)?, PriorModel::load(h)?)),
        _ => None,
    };
    let priors = models.as_ref().map(|(body, hand)| Priors { body, hand });
    let camera = dexfit_core::eval::default_camera();
    let seq = synth_sequence(&tpl, &camera, &rom, &config, priors, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x5eed);
    let init: Vec<PoseParams> = seq.gt.iter().map(|p| perturb_pose(p, args.init_noise, &mut rng)).collect();

    std::fs::create_dir_all(&args.out_dir).map_err(Error::from)?;
    let path = |name: &str| args.out_dir.join(name);
    write_json(&path("keypoints.json"), &KeypointsFile::new(seq.frames))?;
    write_json(&path("gt.json"), &PosesFile::new(seq.gt))?;
    write_json(&path("init.json"), &PosesFile::new(init))?;
    write_json(&path("camera.json"), &CameraFile::new(camera))?;
    info!("{} frames written to {}", args.frames, args.out_dir.display());
    let summary = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "frames": args.frames,
        "seed": args.seed,
        "config": config,
        "files": {
            "keypoints": path("keypoints.json"),
            "gt": path("gt.json"),
            "init": path("init.json"),
            "camera": path("camera.json"),
        },
    });
    emit(&summary, None)
}
