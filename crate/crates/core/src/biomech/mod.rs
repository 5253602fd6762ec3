//! Joint range-of-motion limits, the signer-space body filter and the hand
//! rectifier.

mod rom;
mod signer;

pub use rom::{
    biomech_penalty, decompose, mirror_angles, mirror_bounds, normalize_rom, penalty_var, rectify_hand_frame, rotation_penalty, RomEntry, RomTable,
    Side, ROM_SCHEMA_VERSION,
};
pub use signer::{filter_body_frame, neutral_signing_pose, set_symmetric, FilterOutcome, SignerSpace, Violation};
