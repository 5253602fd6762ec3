use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::body_model::procedural::LOWER_BODY_JOINTS;
use crate::body_model::SkeletonTemplate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Handedness {
    TwoHanded,
    OneHandedLeft,
    OneHandedRight,
}

impl Handedness {
    /// `(left active, right active)`.
    pub fn active_sides(self) -> (bool, bool) {
        match self {
            Handedness::TwoHanded => (true, true),
            Handedness::OneHandedLeft => (true, false),
            Handedness::OneHandedRight => (false, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Handedness::TwoHanded => "two-handed",
            Handedness::OneHandedLeft => "one-handed-left",
            Handedness::OneHandedRight => "one-handed-right",
        }
    }
}

impl fmt::Display for Handedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Handedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-handed" => Ok(Handedness::TwoHanded),
            "one-handed-left" => Ok(Handedness::OneHandedLeft),
            "one-handed-right" => Ok(Handedness::OneHandedRight),
            _ => Err(Error::InvalidInput(format!("unknown handedness `{s}`"))),
        }
    }
}

/// 2D detections for one frame: pixel position, confidence `ω ∈ [0, 1]` and
/// static weight `γ > 0` per named joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame: usize,
    pub handedness: Handedness,
    pub joints: Vec<String>,
    pub keypoints: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Keypoints reordered to template joint order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedKeypoints {
    pub keypoints: Vec<[f64; 2]>,
    /// `γ·ω` per template joint.
    pub weights: Vec<f64>,
}

impl KeypointFrame {
    /// Frame over the template's joints with unit confidence and weight.
    pub fn from_template(tpl: &SkeletonTemplate, frame: usize, handedness: Handedness, keypoints: Vec<[f64; 2]>) -> Self {
        let n = tpl.joint_count();
        KeypointFrame {
            frame,
            handedness,
            joints: tpl.joints.iter().map(|j| j.name.clone()).collect(),
            keypoints,
            confidence: vec![1.0; n],
            weight: vec![1.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if self.keypoints.len() != n || self.confidence.len() != n || self.weight.len() != n {
            return Err(Error::InvalidInput(format!(
                "frame {}: {} joints but {} keypoints, {} confidences, {} weights",
                self.frame,
                n,
                self.keypoints.len(),
                self.confidence.len(),
                self.weight.len()
            )));
        }
        if let Some(c) = self.confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidInput(format!("frame {}: confidence {c} outside [0, 1]", self.frame)));
        }
        if let Some(w) = self.weight.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!("frame {}: joint weight {w} must be positive", self.frame)));
        }
        if self.keypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("frame {}: non-finite keypoint", self.frame)));
        }
        Ok(())
    }

    /// Reorders the frame to template joint order. The joint map must be
    /// total and injective.
    pub fn align(&self, tpl: &SkeletonTemplate) -> Result<AlignedKeypoints> {
        self.validate()?;
        let mut by_name: HashMap<&str, usize> = HashMap::with_capacity(self.joints.len());
        for (i, name) in self.joints.iter().enumerate() {
            if by_name.insert(name.as_str(), i).is_some() {
                return Err(Error::InvalidInput(format!("frame {}: joint `{name}` listed twice", self.frame)));
            }
        }
        let mut keypoints = Vec::with_capacity(tpl.joint_count());
        let mut weights = Vec::with_capacity(tpl.joint_count());
        for j in &tpl.joints {
            let i = *by_name
                .get(j.name.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("frame {}: no keypoint for `{}`", self.frame, j.name)))?;
            keypoints.push(self.keypoints[i]);
            weights.push(self.weight[i] * self.confidence[i]);
        }
        if by_name.len() != tpl.joint_count() {
            return Err(Error::InvalidInput(format!("frame {}: joints not in the template", self.frame)));
        }
        Ok(AlignedKeypoints { keypoints, weights })
    }
}

/// Template joints of the non-dominant arm (shoulder, elbow, wrist) and hand
/// for a one-handed sign.
pub fn non_dominant_joints(handedness: Handedness, tpl: &SkeletonTemplate) -> Vec<usize> {
    let side = match handedness {
        Handedness::TwoHanded => return Vec::new(),
        Handedness::OneHandedLeft => "right",
        Handedness::OneHandedRight => "left",
    };
    let hand = match handedness {
        Handedness::OneHandedLeft => tpl.right_hand_range(),
        _ => tpl.left_hand_range(),
    };
    ["shoulder", "elbow", "wrist"]
        .iter()
        .filter_map(|j| tpl.joint_index(&format!("{side}_{j}")))
        .chain(hand)
        .collect()
}

pub fn lower_body_joints(tpl: &SkeletonTemplate) -> Vec<usize> {
    LOWER_BODY_JOINTS.iter().filter_map(|n| tpl.joint_index(n)).collect()
}

/// Per-joint multipliers: 0 for the lower body and, for one-handed signs, the
/// non-dominant arm and hand; 1 elsewhere.
pub fn decision_mask(handedness: Handedness, tpl: &SkeletonTemplate) -> Vec<f64> {
    let mut mask = vec![1.0; tpl.joint_count()];
    for j in lower_body_joints(tpl).into_iter().chain(non_dominant_joints(handedness, tpl)) {
        mask[j] = 0.0;
    }
    mask
}

pub fn apply_mask(weights: &[f64], mask: &[f64]) -> Vec<f64> {
    weights.iter().zip(mask).map(|(w, m)| w * m).collect()
}
