//! Per-frame pose fitting to 2-D keypoints.
//!
//! The optimization variables are the body latent, one latent per active
//! hand, the root transform and optional arm corrections. Everything else
//! (lower body, the non-dominant arm and hand in one-handed frames) is held
//! at its initialization and never enters the objective.

mod collision;
mod keypoints;
mod lbfgs;
mod objective;
mod robust;
mod sequence;
#[cfg(test)]
pub(crate) mod test_support;

pub use collision::{penetration_loss, penetration_var, Capsule, CollisionProxies, FINGER_RADIUS, FOREARM_RADIUS, PALM_RADIUS, TORSO_RADIUS};
pub use keypoints::{apply_mask, decision_mask, lower_body_joints, non_dominant_joints, AlignedKeypoints, Handedness, KeypointFrame};
pub use lbfgs::{lbfgs_minimize, LbfgsOutcome, LbfgsSettings, Objective, Termination};
pub use objective::{
    bprior_loss, build, frozen_gradients, hprior_loss, joint_loss, temporal_loss, Built, FitProblem, FitWeights, FrameObjective, FrameSetup, Layout,
    Priors, TermValues,
};
pub use robust::{geman_mcclure, gm_squared_var, gm_var};
pub use sequence::{fit_frame, fit_sequence, prealign, FitResult, FrameResult, FrameSolution, Latents, FIT_SCHEMA_VERSION, TORSO_JOINTS};
