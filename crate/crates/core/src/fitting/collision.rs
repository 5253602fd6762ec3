use serde::{Deserialize, Serialize};

use crate::autodiff::{CapsulePair, Tape, Tensor, Var};
use crate::body_model::procedural::FINGERS;
use crate::body_model::{forward_kinematics, PoseParams, SkeletonTemplate};
use crate::error::{Error, Result};

/// A bone segment between two joints, thickened by `radius` meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub name: String,
    pub joints: (usize, usize),
    pub radius: f64,
}

/// Capsules standing in for the body surface plus the pairs tested for
/// interpenetration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionProxies {
    pub capsules: Vec<Capsule>,
    pub pairs: Vec<(usize, usize)>,
}

pub const FOREARM_RADIUS: f64 = 0.035;
pub const PALM_RADIUS: f64 = 0.03;
pub const FINGER_RADIUS: f64 = 0.008;
pub const TORSO_RADIUS: f64 = 0.10;

impl CollisionProxies {
    /// Forearms, palms and finger segments of both hands against each other,
    /// and forearms and palms against the torso.
    pub fn default_for(tpl: &SkeletonTemplate) -> Result<Self> {
        let j = |n: &str| {
            tpl.joint_index(n)
                .ok_or_else(|| Error::InvalidTemplate(format!("collision proxies need joint `{n}`")))
        };
        let mut capsules = Vec::new();
        let mut add = |name: String, a: usize, b: usize, radius: f64| {
            capsules.push(Capsule {
                name,
                joints: (a, b),
                radius,
            });
            capsules.len() - 1
        };
        let torso = [
            add("torso_lower".into(), j("pelvis")?, j("spine3")?, TORSO_RADIUS),
            add("torso_upper".into(), j("spine3")?, j("neck")?, TORSO_RADIUS),
        ];
        let mut side = |s: &str| -> Result<(usize, usize, Vec<usize>)> {
            let forearm = add(
                format!("{s}_forearm"),
                j(&format!("{s}_elbow"))?,
                j(&format!("{s}_wrist"))?,
                FOREARM_RADIUS,
            );
            let palm = add(format!("{s}_palm"), j(&format!("{s}_wrist"))?, j(&format!("{s}_middle1"))?, PALM_RADIUS);
            let mut fingers = Vec::new();
            for f in FINGERS {
                for seg in 1..3 {
                    let a = j(&format!("{s}_{f}{seg}"))?;
                    let b = j(&format!("{s}_{f}{}", seg + 1))?;
                    fingers.push(add(format!("{s}_{f}{seg}"), a, b, FINGER_RADIUS));
                }
            }
            Ok((forearm, palm, fingers))
        };
        let (lf, lp, lfingers) = side("left")?;
        let (rf, rp, rfingers) = side("right")?;

        let mut pairs = vec![(lf, rf), (lf, rp), (lp, rf), (lp, rp)];
        for &t in &torso {
            pairs.extend([(lf, t), (rf, t), (lp, t), (rp, t)]);
        }
        for &a in &lfingers {
            pairs.push((a, rp));
            for &b in &rfingers {
                pairs.push((a, b));
            }
        }
        for &b in &rfingers {
            pairs.push((lp, b));
        }
        let proxies = CollisionProxies { capsules, pairs };
        proxies.validate(tpl.joint_count())?;
        Ok(proxies)
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        for c in &self.capsules {
            if !(c.radius > 0.0) || c.joints.0 >= joint_count || c.joints.1 >= joint_count {
                return Err(Error::InvalidInput(format!("invalid capsule `{}`", c.name)));
            }
        }
        for &(a, b) in &self.pairs {
            let (ca, cb) = match (self.capsules.get(a), self.capsules.get(b)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::InvalidInput(format!("capsule pair ({a}, {b}) out of range"))),
            };
            let shared = [ca.joints.0, ca.joints.1].iter().any(|j| *j == cb.joints.0 || *j == cb.joints.1);
            if shared {
                return Err(Error::InvalidInput(format!("capsules `{}` and `{}` share a joint", ca.name, cb.name)));
            }
        }
        Ok(())
    }

    pub fn capsule_pairs(&self) -> Vec<CapsulePair> {
        self.pairs
            .iter()
            .map(|&(a, b)| {
                let (ca, cb) = (&self.capsules[a], &self.capsules[b]);
                CapsulePair {
                    a: ca.joints,
                    b: cb.joints,
                    radius_sum: ca.radius + cb.radius,
                }
            })
            .collect()
    }
}

/// `Σ_pairs max(0, r_a + r_b − d)²` for a `1×3K` joint row.
pub fn penetration_var<'t>(joints: Var<'t>, proxies: &CollisionProxies) -> Result<Var<'t>> {
    if proxies.pairs.is_empty() {
        return Ok(joints.tape().scalar(0.0));
    }
    Ok(joints.capsule_gaps(&proxies.capsule_pairs())?.relu().square().sum())
}

/// Penetration of a posed template.
pub fn penetration_loss(pose: &PoseParams, proxies: &CollisionProxies, tpl: &SkeletonTemplate) -> Result<f64> {
    let posed = forward_kinematics(tpl, pose)?;
    let tape = Tape::new();
    let row = tape.constant(Tensor::row(posed.joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect()));
    Ok(penetration_var(row, proxies)?.item())
}
