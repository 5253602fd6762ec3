use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CollisionProxies, FitProblem, FitWeights, Handedness, KeypointFrame, Priors};
use crate::biomech::{neutral_signing_pose, RomTable};
use crate::body_model::{forward_kinematics, generate, Camera, PoseParams, ProceduralConfig, SkeletonTemplate};
use crate::priors::{PriorConfig, PriorKind, PriorModel};
use crate::rotations::AxisAngle;

pub(crate) struct Fixture {
    pub tpl: SkeletonTemplate,
    pub rom: RomTable,
    pub camera: Camera,
    pub body: PriorModel,
    pub hand: PriorModel,
    pub proxies: CollisionProxies,
    pub weights: FitWeights,
}

impl Fixture {
    pub fn new() -> Self {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let small = |kind| PriorConfig {
            hidden: 16,
            latent_dim: 5,
            ..PriorConfig::new(kind)
        };
        Fixture {
            rom: RomTable::default_table(),
            camera: Camera::look_at(1000.0, [500.0, 500.0], Vector3::new(0.0, 1.3, 3.0), Vector3::new(0.0, 1.3, 0.0)).unwrap(),
            body: PriorModel::init(&small(PriorKind::Body)).unwrap(),
            hand: PriorModel::init(&small(PriorKind::Hand)).unwrap(),
            proxies: CollisionProxies::default_for(&tpl).unwrap(),
            weights: FitWeights {
                refine_arms: true,
                ..FitWeights::default()
            },
            tpl,
        }
    }

    pub fn problem(&self) -> FitProblem<'_> {
        FitProblem {
            tpl: &self.tpl,
            camera: &self.camera,
            priors: Priors {
                body: &self.body,
                hand: &self.hand,
            },
            rom: &self.rom,
            proxies: &self.proxies,
            weights: &self.weights,
        }
    }

    /// Signing pose with curled fingers and small random offsets.
    pub fn pose(&self, seed: u64) -> PoseParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = neutral_signing_pose(&self.tpl, &self.rom).unwrap();
        let mut jitter = |a: &mut AxisAngle, s: f64| {
            let d = [rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)];
            *a = AxisAngle::new(a.0.x + d[0], a.0.y + d[1], a.0.z + d[2]);
        };
        for a in pose.body_pose.iter_mut() {
            jitter(a, 0.05);
        }
        for a in pose.left_hand_pose.iter_mut().chain(pose.right_hand_pose.iter_mut()) {
            *a = AxisAngle::new(0.0, 0.0, 0.3);
            jitter(a, 0.1);
        }
        pose.root_trans = Vector3::new(0.01, -0.02, 0.03);
        pose
    }

    pub fn frame(&self, pose: &PoseParams, index: usize, handedness: Handedness) -> KeypointFrame {
        let joints = forward_kinematics(&self.tpl, pose).unwrap().joints;
        let px = self.camera.project(&joints).unwrap();
        KeypointFrame::from_template(&self.tpl, index, handedness, px.iter().map(|p| [p.x, p.y]).collect())
    }
}
