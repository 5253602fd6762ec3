use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::biomech::{filter_body_frame, rectify_hand_frame, RomEntry, RomTable, SignerSpace};
use crate::body_model::{forward_kinematics, Camera, PoseParams, SkeletonTemplate};
use crate::error::{Error, Result};
use crate::fitting::{penetration_loss, CollisionProxies, Handedness, KeypointFrame, Priors};
use crate::priors::mirror_hand;
use crate::rotations::{euler_to_matrix, log_unchecked, AxisAngle, EulerConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    /// Random walks over signing-range Euler angles.
    Procedural,
    /// Random walks in the latent spaces of trained priors.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    pub handedness: Handedness,
    pub source: PoseSource,
    /// Low-pass coefficient of the walk velocity, in `[0, 1)`.
    pub smoothing: f64,
    /// Standard deviation of a walk increment: radians for procedural poses,
    /// latent units for prior poses.
    pub step: f64,
    /// Standard deviation of the keypoint noise per pixel coordinate.
    pub pixel_noise: f64,
    /// Confidences are drawn from `[1 − attenuation, 1]`.
    pub confidence_attenuation: f64,
    /// Probability that a joint's confidence is set to 0.
    pub dropout: f64,
    /// Rejected walk steps are redrawn this many times before the previous
    /// pose is repeated.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 30,
            handedness: Handedness::TwoHanded,
            source: PoseSource::Procedural,
            smoothing: 0.8,
            step: 0.03,
            pixel_noise: 0.0,
            confidence_attenuation: 0.0,
            dropout: 0.0,
            max_attempts: 50,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frames > 0
            && (0.0..1.0).contains(&self.smoothing)
            && self.step >= 0.0
            && self.pixel_noise >= 0.0
            && (0.0..=1.0).contains(&self.confidence_attenuation)
            && (0.0..=1.0).contains(&self.dropout)
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid synth config {self:?}")))
        }
    }
}

/// Ground-truth poses and their keypoint observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSequence {
    pub gt: Vec<PoseParams>,
    pub frames: Vec<KeypointFrame>,
}

/// Right-side arm sampling box in ROM Euler angles (degrees): shoulder ZYX,
/// elbow YZX, wrist ZYX.
const ARM_BOX: [(&str, [[f64; 2]; 3]); 3] = [
    ("shoulder", [[55.0, 85.0], [20.0, 60.0], [-20.0, 20.0]]),
    ("elbow", [[50.0, 120.0], [-5.0, 5.0], [-40.0, 40.0]]),
    ("wrist", [[-30.0, 30.0], [-20.0, 10.0], [-15.0, 15.0]]),
];
const CENTRAL: [&str; 5] = ["spine1", "spine2", "spine3", "neck", "head"];
const CENTRAL_RANGE: f64 = 0.08;
/// Fraction of each hand ROM interval kept for sampling, centered.
const HAND_SHRINK: f64 = 0.8;

/// Box-bounded parameterization of signing poses.
struct PoseSpace<'a> {
    tpl: &'a SkeletonTemplate,
    rom: &'a RomTable,
    lo: Vec<f64>,
    hi: Vec<f64>,
    arms: Vec<(usize, usize, EulerConvention, bool)>,
    central: Vec<usize>,
}

impl<'a> PoseSpace<'a> {
    fn new(tpl: &'a SkeletonTemplate, rom: &'a RomTable) -> Result<Self> {
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        let mut arms = Vec::new();
        for left in [false, true] {
            for (name, bounds) in ARM_BOX {
                let entry = rom
                    .entry(&format!("right_{name}"))
                    .ok_or_else(|| Error::InvalidInput(format!("no ROM entry right_{name}")))?;
                let side = if left { "left" } else { "right" };
                let joint = tpl
                    .joint_index(&format!("{side}_{name}"))
                    .ok_or(Error::InvalidTemplate(format!("missing {side}_{name}")))?;
                arms.push((lo.len(), joint, entry.convention, left));
                for b in bounds {
                    lo.push(b[0].to_radians());
                    hi.push(b[1].to_radians());
                }
            }
        }
        let central = CENTRAL
            .iter()
            .map(|n| tpl.joint_index(n).ok_or(Error::InvalidTemplate(format!("missing {n}"))))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..3 * central.len() {
            lo.push(-CENTRAL_RANGE);
            hi.push(CENTRAL_RANGE);
        }
        for _ in 0..2 {
            for e in &rom.right_hand {
                for a in 0..3 {
                    let (mid, half) = (0.5 * (e.min[a] + e.max[a]), 0.5 * HAND_SHRINK * (e.max[a] - e.min[a]));
                    lo.push(mid - half);
                    hi.push(mid + half);
                }
            }
        }
        Ok(PoseSpace {
            tpl,
            rom,
            lo,
            hi,
            arms,
            central,
        })
    }

    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| rng.random_range(*l..=*h)).collect()
    }

    fn clamp(&self, p: &mut [f64]) {
        for ((v, l), h) in p.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    fn compose(&self, p: &[f64]) -> Result<PoseParams> {
        let tpl = self.tpl;
        let mut pose = PoseParams::zero(tpl.body_joint_count, tpl.hand_joint_count, tpl.shape_count());
        for &(at, joint, conv, left) in &self.arms {
            let right = [p[at], p[at + 1], p[at + 2]];
            let angles = if left { crate::biomech::mirror_angles(&right, conv) } else { right };
            pose.body_pose[joint - 1] = log_unchecked(&euler_to_matrix(angles, conv).0);
        }
        let mut at = 2 * 3 * ARM_BOX.len();
        for &j in &self.central {
            pose.body_pose[j - 1] = AxisAngle::new(p[at], p[at + 1], p[at + 2]);
            at += 3;
        }
        let hand = |at: usize| -> Result<Vec<AxisAngle>> {
            let raw: Vec<AxisAngle> = self
                .rom
                .right_hand
                .iter()
                .enumerate()
                .map(|(k, e)| log_unchecked(&euler_to_matrix([p[at + 3 * k], p[at + 3 * k + 1], p[at + 3 * k + 2]], e.convention).0))
                .collect();
            rectify_hand_frame(&raw, &self.rom.right_hand)
        };
        let n = 3 * tpl.hand_joint_count;
        pose.left_hand_pose = mirror_hand(&hand(at)?);
        pose.right_hand_pose = hand(at + n)?;
        Ok(pose)
    }
}

/// Checks the construction contract of generated frames: the body passes
/// the signer filter and no collision proxies overlap.
fn admissible(pose: &PoseParams, tpl: &SkeletonTemplate, rom: &RomTable, proxies: &CollisionProxies) -> Result<bool> {
    Ok(filter_body_frame(pose, rom, &SignerSpace::default(), tpl)?.accepted && penetration_loss(pose, proxies, tpl)? == 0.0)
}

fn hands_in_rom(pose: &PoseParams, entries: &[RomEntry]) -> Result<bool> {
    let right = rectify_hand_frame(&pose.right_hand_pose, entries)?;
    let left_in = mirror_hand(&pose.left_hand_pose);
    let left = rectify_hand_frame(&left_in, entries)?;
    Ok(right == pose.right_hand_pose && left == left_in)
}

/// Independent signing poses that pass the body filter and have no proxy
/// overlap; hands are rectified into their ROM.
pub fn sample_signing_poses(tpl: &SkeletonTemplate, rom: &RomTable, n: usize, seed: u64) -> Result<Vec<PoseParams>> {
    let space = PoseSpace::new(tpl, rom)?;
    let proxies = CollisionProxies::default_for(tpl)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 100 * n.max(1) {
            return Err(Error::InvalidInput("signing pose sampler rejected too many candidates".into()));
        }
        let pose = space.compose(&space.sample(&mut rng))?;
        if admissible(&pose, tpl, rom, &proxies)? {
            out.push(pose);
        }
    }
    Ok(out)
}

/// Adds `N(0, σ²)` to every joint rotation component and to the root
/// orientation; translation and shape are kept.
pub fn perturb_pose(pose: &PoseParams, sigma: f64, rng: &mut ChaCha8Rng) -> PoseParams {
    let mut out = pose.clone();
    let mut jitter = |a: &mut AxisAngle| {
        let d: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        *a = AxisAngle(a.0 + sigma * Vector3::from(d));
    };
    jitter(&mut out.root_orient);
    for a in out
        .body_pose
        .iter_mut()
        .chain(out.left_hand_pose.iter_mut())
        .chain(out.right_hand_pose.iter_mut())
    {
        jitter(a);
    }
    out
}

/// A smoothed, box-clamped random walk with rejection of inadmissible steps.
struct Walk {
    state: Vec<f64>,
    velocity: Vec<f64>,
}

impl Walk {
    fn advance<F>(&mut self, config: &SynthConfig, rng: &mut ChaCha8Rng, clamp: &dyn Fn(&mut [f64]), accept: &mut F) -> Result<()>
    where
        F: FnMut(&[f64]) -> Result<bool>,
    {
        let noise = Normal::new(0.0, config.step.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for _ in 0..config.max_attempts {
            let v: Vec<f64> = self
                .velocity
                .iter()
                .map(|v| config.smoothing * v + (1.0 - config.smoothing) * noise.sample(rng))
                .collect();
            let mut next: Vec<f64> = self.state.iter().zip(&v).map(|(s, d)| s + d).collect();
            clamp(&mut next);
            if accept(&next)? {
                self.state = next;
                self.velocity = v;
                return Ok(());
            }
        }
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
}

/// Projects every joint and applies noise, confidence attenuation and
/// dropout.
pub fn observe(
    tpl: &SkeletonTemplate,
    camera: &Camera,
    pose: &PoseParams,
    index: usize,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<KeypointFrame> {
    let joints = forward_kinematics(tpl, pose)?.joints;
    let px = camera.project(&joints)?;
    let noise = Normal::new(0.0, config.pixel_noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut frame = KeypointFrame::from_template(tpl, index, config.handedness, Vec::with_capacity(px.len()));
    for (i, p) in px.iter().enumerate() {
        let mut k = [p.x, p.y];
        if config.pixel_noise > 0.0 {
            k[0] += noise.sample(rng);
            k[1] += noise.sample(rng);
        }
        frame.keypoints.push(k);
        if config.confidence_attenuation > 0.0 {
            frame.confidence[i] = 1.0 - config.confidence_attenuation * rng.random::<f64>();
        }
        if config.dropout > 0.0 && rng.random::<f64>() < config.dropout {
            frame.confidence[i] = 0.0;
        }
    }
    Ok(frame)
}

/// Generates a smooth pose sequence and its keypoints. Prior-sourced
/// sequences need `priors`; their poses are exact decoder outputs.
pub fn synth_sequence(
    tpl: &SkeletonTemplate,
    camera: &Camera,
    rom: &RomTable,
    config: &SynthConfig,
    priors: Option<Priors>,
    seed: u64,
) -> Result<SynthSequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proxies = CollisionProxies::default_for(tpl)?;
    let space = PoseSpace::new(tpl, rom)?;
    let mut gt = Vec::with_capacity(config.frames);

    match config.source {
        PoseSource::Procedural => {
            let mut state = space.sample(&mut rng);
            let mut tries = 0;
            while !admissible(&space.compose(&state)?, tpl, rom, &proxies)? {
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::InvalidInput("no admissible starting pose".into()));
                }
                state = space.sample(&mut rng);
            }
            let mut walk = Walk {
                velocity: vec![0.0; space.dim()],
                state,
            };
            gt.push(space.compose(&walk.state)?);
            let clamp = |p: &mut [f64]| space.clamp(p);
            while gt.len() < config.frames {
                walk.advance(config, &mut rng, &clamp, &mut |p| admissible(&space.compose(p)?, tpl, rom, &proxies))?;
                gt.push(space.compose(&walk.state)?);
            }
        }
        PoseSource::Prior => {
            let priors = priors.ok_or_else(|| Error::InvalidInput("prior-sourced synthesis needs trained priors".into()))?;
            priors.validate()?;
            let (db, dh) = (priors.body.latent_dim(), priors.hand.latent_dim());
            let decode = |z: &[f64]| -> Result<PoseParams> {
                let mut pose = PoseParams::zero(tpl.body_joint_count, tpl.hand_joint_count, tpl.shape_count());
                pose.body_pose = priors.body.decode(&z[..db])?.axis_angles;
                pose.left_hand_pose = mirror_hand(&priors.hand.decode(&z[db..db + dh])?.axis_angles);
                pose.right_hand_pose = priors.hand.decode(&z[db + dh..])?.axis_angles;
                Ok(pose)
            };
            let ok = |z: &[f64]| -> Result<bool> {
                let pose = decode(z)?;
                Ok(admissible(&pose, tpl, rom, &proxies)? && hands_in_rom(&pose, &rom.right_hand)?)
            };
            let mut start = None;
            for candidate in sample_signing_poses(tpl, rom, config.max_attempts, rng.random())? {
                let mut z = priors.body.encode_axis_angles(&candidate.body_pose)?.0;
                z.extend(priors.hand.encode_axis_angles(&mirror_hand(&candidate.left_hand_pose))?.0);
                z.extend(priors.hand.encode_axis_angles(&candidate.right_hand_pose)?.0);
                if ok(&z)? {
                    start = Some(z);
                    break;
                }
            }
            let state = start.ok_or_else(|| Error::InvalidInput("no admissible decoded signing pose; is the prior trained?".into()))?;
            let mut walk = Walk {
                velocity: vec![0.0; state.len()],
                state,
            };
            gt.push(decode(&walk.state)?);
            let clamp = |_: &mut [f64]| {};
            while gt.len() < config.frames {
                walk.advance(config, &mut rng, &clamp, &mut |z| ok(z))?;
                gt.push(decode(&walk.state)?);
            }
        }
    }

    let frames = gt
        .iter()
        .enumerate()
        .map(|(t, pose)| observe(tpl, camera, pose, t, config, &mut rng))
        .collect::<Result<_>>()?;
    Ok(SynthSequence { gt, frames })
}

/// Default viewing camera: 2 m in front of the chest, 1000 px focal length,
/// framing the upper body.
pub fn default_camera() -> Camera {
    Camera::look_at(1000.0, [500.0, 500.0], Vector3::new(0.0, 1.3, 2.0), Vector3::new(0.0, 1.3, 0.0)).expect("valid camera")
}
