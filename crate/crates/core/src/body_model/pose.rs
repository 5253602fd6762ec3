use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotations::AxisAngle;

/// Full articulation and shape of one body.
///
/// Flat-vector order: root orientation, root translation, body joints,
/// left hand, right hand, shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub root_orient: AxisAngle,
    pub root_trans: Vector3<f64>,
    pub body_pose: Vec<AxisAngle>,
    pub left_hand_pose: Vec<AxisAngle>,
    pub right_hand_pose: Vec<AxisAngle>,
    pub shape: Vec<f64>,
}

impl PoseParams {
    pub fn zero(body_joints: usize, hand_joints: usize, shape_count: usize) -> Self {
        PoseParams {
            root_orient: AxisAngle::zero(),
            root_trans: Vector3::zeros(),
            body_pose: vec![AxisAngle::zero(); body_joints],
            left_hand_pose: vec![AxisAngle::zero(); hand_joints],
            right_hand_pose: vec![AxisAngle::zero(); hand_joints],
            shape: vec![0.0; shape_count],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.root_orient.is_finite()
            && self.root_trans.iter().all(|v| v.is_finite())
            && self.body_pose.iter().all(AxisAngle::is_finite)
            && self.left_hand_pose.iter().all(AxisAngle::is_finite)
            && self.right_hand_pose.iter().all(AxisAngle::is_finite)
            && self.shape.iter().all(|v| v.is_finite())
    }

    /// Local rotations in skeleton order: root, body, left hand, right hand.
    pub fn local_rotations(&self) -> impl Iterator<Item = &AxisAngle> {
        std::iter::once(&self.root_orient)
            .chain(&self.body_pose)
            .chain(&self.left_hand_pose)
            .chain(&self.right_hand_pose)
    }

    pub fn joint_count(&self) -> usize {
        1 + self.body_pose.len() + self.left_hand_pose.len() + self.right_hand_pose.len()
    }

    pub fn vector_len(&self) -> usize {
        6 + 3 * (self.body_pose.len() + self.left_hand_pose.len() + self.right_hand_pose.len()) + self.shape.len()
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.vector_len());
        out.extend_from_slice(&self.root_orient.as_array());
        out.extend(self.root_trans.iter());
        for aa in self.body_pose.iter().chain(&self.left_hand_pose).chain(&self.right_hand_pose) {
            out.extend_from_slice(&aa.as_array());
        }
        out.extend_from_slice(&self.shape);
        out
    }

    pub fn from_vector(v: &[f64], body_joints: usize, hand_joints: usize, shape_count: usize) -> Result<Self> {
        let expected = 6 + 3 * (body_joints + 2 * hand_joints) + shape_count;
        if v.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: v.len() });
        }
        let aa = |i: usize| AxisAngle::new(v[i], v[i + 1], v[i + 2]);
        let mut at = 6;
        let mut take = |n: usize| {
            let out: Vec<AxisAngle> = (0..n).map(|j| aa(at + 3 * j)).collect();
            at += 3 * n;
            out
        };
        let body_pose = take(body_joints);
        let left_hand_pose = take(hand_joints);
        let right_hand_pose = take(hand_joints);
        Ok(PoseParams {
            root_orient: aa(0),
            root_trans: Vector3::new(v[3], v[4], v[5]),
            body_pose,
            left_hand_pose,
            right_hand_pose,
            shape: v[expected - shape_count..].to_vec(),
        })
    }

    /// Flattened body pose (3 per joint).
    pub fn body_vector(&self) -> Vec<f64> {
        self.body_pose.iter().flat_map(|a| a.as_array()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn vector_round_trip(values in proptest::collection::vec(-3.0f64..3.0, 6 + 3 * (4 + 2 * 2) + 3)) {
            let pose = PoseParams::from_vector(&values, 4, 2, 3).unwrap();
            prop_assert_eq!(pose.to_vector(), values);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(PoseParams::from_vector(&[0.0; 5], 1, 1, 1).is_err());
    }

    #[test]
    fn local_rotation_order() {
        let mut p = PoseParams::zero(2, 1, 0);
        p.root_orient = AxisAngle::new(1.0, 0.0, 0.0);
        p.right_hand_pose[0] = AxisAngle::new(0.0, 0.0, 5.0);
        let all: Vec<_> = p.local_rotations().collect();
        assert_eq!(all.len(), 5);
        assert_eq!(all[0].0.x, 1.0);
        assert_eq!(all[4].0.z, 5.0);
    }
}
