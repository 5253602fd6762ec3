use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rom::{mirror_angles, RomEntry, RomTable};
use crate::body_model::{forward_kinematics, PoseParams, SkeletonTemplate};
use crate::error::{Error, Result};
use crate::rotations::{euler_to_matrix, euler_unchecked, log_unchecked};

/// Torso-anchored box in which signing happens, in template proportions.
///
/// Lateral extent is measured in shoulder half-widths from the spine, vertical
/// extent in torso lengths from the shoulder line, depth in torso lengths in
/// front of the chest joint. Coordinates are taken in the chest's world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignerSpace {
    pub lateral: f64,
    pub vertical: (f64, f64),
    pub depth: (f64, f64),
    /// Largest allowed angle of the upper arm behind the coronal plane.
    pub abduction_cap: f64,
    /// Largest allowed horizontal angle measured from straight out sideways
    /// toward the front and across the body.
    pub adduction_cap: f64,
    /// Upper arms whose horizontal projection is shorter than this fraction of
    /// their length have no meaningful horizontal angle and are not tested.
    pub min_horizontal: f64,
}

impl Default for SignerSpace {
    fn default() -> Self {
        SignerSpace {
            lateral: 1.2,
            vertical: (-0.3, 0.5),
            depth: (0.05, 0.8),
            abduction_cap: 0.0,
            adduction_cap: 130f64.to_radians(),
            min_horizontal: 0.2,
        }
    }
}

impl SignerSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lateral > 0.0
            && self.vertical.0 < self.vertical.1
            && self.depth.0 < self.depth.1
            && self.abduction_cap >= 0.0
            && self.adduction_cap > 0.0
            && self.min_horizontal >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid signer space {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Rom {
        joint: String,
        axis: usize,
        angle: f64,
        min: f64,
        max: f64,
    },
    OutsideSignerSpace {
        joint: String,
        coordinate: String,
        value: f64,
        low: f64,
        high: f64,
    },
    HorizontalAbduction {
        joint: String,
        angle: f64,
        cap: f64,
    },
    HorizontalAdduction {
        joint: String,
        angle: f64,
        cap: f64,
    },
    Gimbal {
        joint: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub accepted: bool,
    pub violations: Vec<Violation>,
}

/// Template measurements the signer-space test is expressed in.
#[derive(Debug, Clone, Copy)]
struct Proportions {
    shoulder_half_width: f64,
    torso_length: f64,
    shoulder_height: f64,
    chest: usize,
}

fn joint(tpl: &SkeletonTemplate, name: &str) -> Result<usize> {
    tpl.joint_index(name)
        .ok_or_else(|| Error::InvalidInput(format!("template has no joint `{name}`")))
}

fn proportions(tpl: &SkeletonTemplate, rest: &[Vector3<f64>]) -> Result<Proportions> {
    let ls = rest[joint(tpl, "left_shoulder")?];
    let rs = rest[joint(tpl, "right_shoulder")?];
    let chest = joint(tpl, "spine3")?;
    let torso_length = (rest[joint(tpl, "neck")?] - rest[0]).norm();
    Ok(Proportions {
        shoulder_half_width: 0.5 * (ls - rs).norm(),
        torso_length,
        shoulder_height: 0.5 * (ls.y + rs.y) - rest[chest].y,
        chest,
    })
}

fn rom_violations(pose: &PoseParams, tpl: &SkeletonTemplate, entries: &[RomEntry], out: &mut Vec<Violation>) -> Result<()> {
    for (entry, j) in entries.iter().zip(RomTable::indices(entries, tpl)?) {
        if !tpl.body_range().contains(&j) {
            return Err(Error::InvalidInput(format!("`{}` is not a body joint", entry.joint)));
        }
        let local = pose.body_pose[j - 1].to_matrix().0;
        let e = euler_unchecked(&local, entry.convention);
        if e.gimbal {
            out.push(Violation::Gimbal { joint: entry.joint.clone() });
            continue;
        }
        for axis in 0..3 {
            let angle = e.angles[axis];
            if angle < entry.min[axis] || angle > entry.max[axis] {
                out.push(Violation::Rom {
                    joint: entry.joint.clone(),
                    axis,
                    angle,
                    min: entry.min[axis],
                    max: entry.max[axis],
                });
            }
        }
    }
    Ok(())
}

/// Accepts a body frame when the six constrained joints are within their
/// ranges, both wrists lie in the signer space and both upper arms respect the
/// horizontal-plane caps. A rejection lists every violation found.
pub fn filter_body_frame(pose: &PoseParams, rom: &RomTable, space: &SignerSpace, tpl: &SkeletonTemplate) -> Result<FilterOutcome> {
    space.validate()?;
    let mut violations = Vec::new();
    rom_violations(pose, tpl, &rom.body, &mut violations)?;

    let posed = forward_kinematics(tpl, pose)?;
    let p = proportions(tpl, &posed.rest_joints)?;
    let frame = posed.rotations[p.chest];
    let origin = posed.joints[p.chest];
    let local = |x: &Vector3<f64>| frame.transpose() * (x - origin);

    for side in ["left", "right"] {
        let wrist_name = format!("{side}_wrist");
        let w = local(&posed.joints[joint(tpl, &wrist_name)?]);
        let coords = [
            ("lateral", w.x.abs() / p.shoulder_half_width, (-space.lateral, space.lateral)),
            ("vertical", (w.y - p.shoulder_height) / p.torso_length, space.vertical),
            ("depth", w.z / p.torso_length, space.depth),
        ];
        for (name, value, (low, high)) in coords {
            if !(value >= low && value <= high) {
                violations.push(Violation::OutsideSignerSpace {
                    joint: wrist_name.clone(),
                    coordinate: name.to_string(),
                    value,
                    low,
                    high,
                });
            }
        }

        let shoulder_name = format!("{side}_shoulder");
        let shoulder = joint(tpl, &shoulder_name)?;
        let elbow = joint(tpl, &format!("{side}_elbow"))?;
        let arm = local(&posed.joints[elbow]) - local(&posed.joints[shoulder]);
        let outward = if side == "left" { arm.x } else { -arm.x };
        let horizontal = outward.hypot(arm.z);
        let upper_arm = (posed.rest_joints[elbow] - posed.rest_joints[shoulder]).norm();
        if horizontal < space.min_horizontal * upper_arm {
            continue;
        }
        let angle = arm.z.atan2(outward);
        if angle < -space.abduction_cap {
            violations.push(Violation::HorizontalAbduction {
                joint: shoulder_name,
                angle,
                cap: space.abduction_cap,
            });
        } else if angle > space.adduction_cap {
            violations.push(Violation::HorizontalAdduction {
                joint: shoulder_name,
                angle,
                cap: space.adduction_cap,
            });
        }
    }
    Ok(FilterOutcome {
        accepted: violations.is_empty(),
        violations,
    })
}

/// Sets a right-side joint from Euler angles in its ROM convention and the
/// left-side counterpart to the mirror image.
pub fn set_symmetric(pose: &mut PoseParams, tpl: &SkeletonTemplate, rom: &RomTable, name: &str, right: [f64; 3]) -> Result<()> {
    let entry = rom
        .entry(&format!("right_{name}"))
        .ok_or_else(|| Error::InvalidInput(format!("no ROM entry for right_{name}")))?;
    let left = mirror_angles(&right, entry.convention);
    for (side, angles) in [("right", right), ("left", left)] {
        let j = tpl
            .joint_index(&format!("{side}_{name}"))
            .filter(|j| tpl.body_range().contains(j))
            .ok_or_else(|| Error::InvalidInput(format!("no body joint {side}_{name}")))?;
        pose.body_pose[j - 1] = log_unchecked(&euler_to_matrix(angles, entry.convention).0);
    }
    Ok(())
}

/// Arms lowered and brought forward, elbows bent so the wrists sit in front
/// of the chest.
pub fn neutral_signing_pose(tpl: &SkeletonTemplate, rom: &RomTable) -> Result<PoseParams> {
    let mut pose = PoseParams::zero(tpl.body_joint_count, tpl.hand_joint_count, tpl.shape_count());
    set_symmetric(&mut pose, tpl, rom, "shoulder", [80f64.to_radians(), 40f64.to_radians(), 0.0])?;
    set_symmetric(&mut pose, tpl, rom, "elbow", [90f64.to_radians(), 0.0, 0.0])?;
    set_symmetric(&mut pose, tpl, rom, "wrist", [0.1, 0.0, 0.0])?;
    Ok(pose)
}
