//! Shared fixture for the benchmarks.

use dexfit_core::biomech::RomTable;
use dexfit_core::body_model::{generate, Camera, PoseParams, ProceduralConfig, SkeletonTemplate};
use dexfit_core::eval::{default_camera, synth_sequence, SynthConfig};
use dexfit_core::fitting::{CollisionProxies, FitProblem, FitWeights, KeypointFrame, Priors};
use dexfit_core::priors::{PriorConfig, PriorKind, PriorModel};

/// Procedural template, default camera, freshly initialized priors and one
/// synthetic frame with its ground truth.
pub struct Scene {
    pub tpl: SkeletonTemplate,
    pub rom: RomTable,
    pub camera: Camera,
    pub body: PriorModel,
    pub hand: PriorModel,
    pub proxies: CollisionProxies,
    pub weights: FitWeights,
    pub frame: KeypointFrame,
    pub gt: PoseParams,
}

impl Scene {
    pub fn new() -> Self {
        let tpl = generate(&ProceduralConfig::default()).expect("template");
        let rom = RomTable::default_table();
        let camera = default_camera();
        let config = SynthConfig {
            frames: 1,
            ..SynthConfig::default()
        };
        let mut seq = synth_sequence(&tpl, &camera, &rom, &config, None, 11).expect("synthetic frame");
        Scene {
            body: PriorModel::init(&PriorConfig::new(PriorKind::Body)).expect("body prior"),
            hand: PriorModel::init(&PriorConfig::new(PriorKind::Hand)).expect("hand prior"),
            proxies: CollisionProxies::default_for(&tpl).expect("proxies"),
            weights: FitWeights::default(),
            frame: seq.frames.remove(0),
            gt: seq.gt.remove(0),
            tpl,
            rom,
            camera,
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
}

impl Default for Scene {
    fn default() -> Self {
        Self::new()
    }
}
