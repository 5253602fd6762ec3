use nalgebra::{Matrix3, Vector3};

use super::pose::PoseParams;
use super::template::SkeletonTemplate;
use crate::error::{Error, Result};

/// Template after applying shape coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedTemplate {
    pub vertices: Vec<Vector3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
}

/// World-space result of forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct Posed {
    pub rest_joints: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

impl Posed {
    /// Maps a rest-pose point rigidly attached to `joint` into world space.
    pub fn transform_point(&self, joint: usize, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotations[joint] * (p - self.rest_joints[joint]) + self.joints[joint]
    }
}

pub fn shaped_template(tpl: &SkeletonTemplate, shape: &[f64]) -> Result<ShapedTemplate> {
    if shape.len() != tpl.shape_count() {
        return Err(Error::DimensionMismatch {
            expected: tpl.shape_count(),
            got: shape.len(),
        });
    }
    let mut vertices = tpl.vertices.clone();
    for (beta, dir) in shape.iter().zip(&tpl.shape_dirs) {
        if *beta != 0.0 {
            for (v, d) in vertices.iter_mut().zip(dir) {
                *v += d * *beta;
            }
        }
    }
    let rest_joints = tpl
        .joint_regressor
        .iter()
        .map(|row| row.iter().map(|&(v, w)| vertices[v] * w).sum())
        .collect();
    Ok(ShapedTemplate { vertices, rest_joints })
}

pub(crate) fn check_layout(tpl: &SkeletonTemplate, pose: &PoseParams) -> Result<()> {
    let checks = [
        (tpl.body_joint_count, pose.body_pose.len()),
        (tpl.hand_joint_count, pose.left_hand_pose.len()),
        (tpl.hand_joint_count, pose.right_hand_pose.len()),
        (tpl.shape_count(), pose.shape.len()),
    ];
    for (expected, got) in checks {
        if expected != got {
            return Err(Error::DimensionMismatch { expected, got });
        }
    }
    Ok(())
}

/// Forward kinematics from explicit local rotations (root first).
pub fn chain(parents: &[Option<usize>], rest_joints: &[Vector3<f64>], locals: &[Matrix3<f64>], root_trans: &Vector3<f64>) -> Posed {
    let k = parents.len();
    let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(k);
    let mut joints: Vec<Vector3<f64>> = Vec::with_capacity(k);
    // Rest-to-world transforms x -> G x + t; at zero pose t is exactly zero,
    // so rest joints are reproduced bit for bit.
    let mut offsets: Vec<Vector3<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let rest = rest_joints[j];
        let (g, t) = match parents[j] {
            None => {
                let g = locals[j];
                (g, rest - g * rest + root_trans)
            }
            Some(p) => {
                let g = rotations[p] * locals[j];
                (g, rotations[p] * rest + offsets[p] - g * rest)
            }
        };
        joints.push(g * rest + t);
        rotations.push(g);
        offsets.push(t);
    }
    Posed {
        rest_joints: rest_joints.to_vec(),
        rotations,
        joints,
    }
}

pub fn forward_kinematics(tpl: &SkeletonTemplate, pose: &PoseParams) -> Result<Posed> {
    check_layout(tpl, pose)?;
    let shaped = shaped_template(tpl, &pose.shape)?;
    Ok(pose_shaped(tpl, &shaped, pose))
}

/// Forward kinematics against an already shaped template.
pub fn pose_shaped(tpl: &SkeletonTemplate, shaped: &ShapedTemplate, pose: &PoseParams) -> Posed {
    let locals: Vec<Matrix3<f64>> = pose.local_rotations().map(|a| a.to_matrix().0).collect();
    chain(&tpl.parents(), &shaped.rest_joints, &locals, &pose.root_trans)
}

/// Linear blend skinning of the given vertices.
pub fn skin(tpl: &SkeletonTemplate, shaped: &ShapedTemplate, posed: &Posed) -> Vec<Vector3<f64>> {
    shaped
        .vertices
        .iter()
        .zip(&tpl.skin_weights)
        .map(|(v, row)| row.iter().map(|&(j, w)| posed.transform_point(j, v) * w).sum())
        .collect()
}

pub fn skin_vertices(tpl: &SkeletonTemplate, pose: &PoseParams) -> Result<Vec<Vector3<f64>>> {
    check_layout(tpl, pose)?;
    let shaped = shaped_template(tpl, &pose.shape)?;
    let posed = pose_shaped(tpl, &shaped, pose);
    Ok(skin(tpl, &shaped, &posed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::procedural::{generate, ProceduralConfig};
    use crate::rotations::{axis_angle_to_matrix, AxisAngle};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn tpl() -> SkeletonTemplate {
        generate(&ProceduralConfig::default()).unwrap()
    }

    fn zero_pose(t: &SkeletonTemplate) -> PoseParams {
        PoseParams::zero(t.body_joint_count, t.hand_joint_count, t.shape_count())
    }

    #[test]
    fn zero_shape_gives_template() {
        let t = tpl();
        let s = shaped_template(&t, &[0.0; 10]).unwrap();
        assert_eq!(s.vertices, t.vertices);
        let regressed: Vec<Vector3<f64>> = t
            .joint_regressor
            .iter()
            .map(|row| row.iter().map(|&(v, w)| t.vertices[v] * w).sum())
            .collect();
        assert_eq!(s.rest_joints, regressed);
    }

    #[test]
    fn unit_shape_adds_direction() {
        let t = tpl();
        let mut beta = [0.0; 10];
        beta[0] = 1.0;
        let s = shaped_template(&t, &beta).unwrap();
        for i in 0..t.vertex_count() {
            assert_eq!(s.vertices[i], t.vertices[i] + t.shape_dirs[0][i]);
        }
    }

    #[test]
    fn shape_superposition() {
        let t = tpl();
        let (a, b) = (0.7, -1.3);
        let mut beta = [0.0; 10];
        beta[0] = a;
        beta[1] = b;
        let both = shaped_template(&t, &beta).unwrap();
        let mut e1 = [0.0; 10];
        e1[0] = 1.0;
        let mut e2 = [0.0; 10];
        e2[1] = 1.0;
        let s1 = shaped_template(&t, &e1).unwrap();
        let s2 = shaped_template(&t, &e2).unwrap();
        for i in 0..t.vertex_count() {
            let oracle = t.vertices[i] + (s1.vertices[i] - t.vertices[i]) * a + (s2.vertices[i] - t.vertices[i]) * b;
            assert!((both.vertices[i] - oracle).norm() < 1e-12);
        }
        let s0 = shaped_template(&t, &[0.0; 10]).unwrap();
        for j in 0..t.joint_count() {
            let oracle = s0.rest_joints[j] + (s1.rest_joints[j] - s0.rest_joints[j]) * a + (s2.rest_joints[j] - s0.rest_joints[j]) * b;
            assert!((both.rest_joints[j] - oracle).norm() < 1e-12);
        }
    }

    #[test]
    fn shape_length_checked() {
        assert!(matches!(
            shaped_template(&tpl(), &[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 10, got: 3 })
        ));
    }

    #[test]
    fn zero_pose_returns_rest_joints() {
        let t = tpl();
        let posed = forward_kinematics(&t, &zero_pose(&t)).unwrap();
        let shaped = shaped_template(&t, &[0.0; 10]).unwrap();
        assert_eq!(posed.joints, shaped.rest_joints);
    }

    #[test]
    fn elbow_flexion_two_bone_chain() {
        let t = tpl();
        let mut pose = zero_pose(&t);
        let elbow = t.joint_index("left_elbow").unwrap();
        let wrist = t.joint_index("left_wrist").unwrap();
        pose.body_pose[elbow - 1] = AxisAngle::new(0.0, FRAC_PI_2, 0.0);
        let posed = forward_kinematics(&t, &pose).unwrap();
        let rest = &shaped_template(&t, &[0.0; 10]).unwrap().rest_joints;
        // Hand-computed 90 degree turn about +y: (x, y, z) -> (z, y, -x).
        let d = rest[wrist] - rest[elbow];
        let expected = rest[elbow] + Vector3::new(d.z, d.y, -d.x);
        assert!((posed.joints[wrist] - expected).norm() < 1e-12);
        assert!((posed.joints[elbow] - rest[elbow]).norm() < 1e-15);
    }

    #[test]
    fn zero_pose_skinning_is_identity() {
        let t = tpl();
        let mut pose = zero_pose(&t);
        pose.shape[2] = 0.4;
        let verts = skin_vertices(&t, &pose).unwrap();
        let shaped = shaped_template(&t, &pose.shape).unwrap();
        for (a, b) in verts.iter().zip(&shaped.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn blended_vertex_is_mean_of_rigid_transforms() {
        let mut t = tpl();
        let (a, b) = (t.joint_index("left_elbow").unwrap(), t.joint_index("left_wrist").unwrap());
        t.skin_weights[0] = vec![(a, 0.5), (b, 0.5)];
        t.skin_weights[1] = vec![(b, 1.0)];
        let mut pose = zero_pose(&t);
        pose.body_pose[a - 1] = AxisAngle::new(0.2, 0.9, -0.1);
        pose.body_pose[b - 1] = AxisAngle::new(-0.4, 0.1, 0.6);
        pose.root_trans = Vector3::new(0.1, 0.0, -0.2);
        let verts = skin_vertices(&t, &pose).unwrap();
        let posed = forward_kinematics(&t, &pose).unwrap();
        let v0 = t.vertices[0];
        let oracle = (posed.transform_point(a, &v0) + posed.transform_point(b, &v0)) * 0.5;
        assert!((verts[0] - oracle).norm() < 1e-12);
        assert!((verts[1] - posed.transform_point(b, &t.vertices[1])).norm() < 1e-12);
    }

    #[test]
    fn joints_match_explicit_recursion() {
        let t = tpl();
        let mut pose = zero_pose(&t);
        for (i, aa) in pose.body_pose.iter_mut().enumerate() {
            *aa = AxisAngle::new(0.05 * i as f64, -0.03, 0.02 * (i % 3) as f64);
        }
        let posed = forward_kinematics(&t, &pose).unwrap();
        let rest = &posed.rest_joints;
        let locals: Vec<Matrix3<f64>> = pose.local_rotations().map(|a| a.to_matrix().0).collect();
        for j in 0..t.joint_count() {
            // Walk the chain from the joint to the root.
            let mut path = vec![j];
            while let Some(p) = t.parent(*path.last().unwrap()) {
                path.push(p);
            }
            path.reverse();
            let mut g = Matrix3::identity();
            let mut x = rest[path[0]] + pose.root_trans;
            for w in path.windows(2) {
                g *= locals[w[0]];
                x += g * (rest[w[1]] - rest[w[0]]);
            }
            assert!((posed.joints[j] - x).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn fk_equivariant_under_root_rotation(
            rx in -1.0f64..1.0, ry in -1.0f64..1.0, rz in -1.0f64..1.0,
            tx in -1.0f64..1.0, tz in -1.0f64..1.0,
            bend in -1.0f64..1.0,
        ) {
            let t = tpl();
            let mut pose = zero_pose(&t);
            pose.body_pose[17] = AxisAngle::new(0.0, bend, 0.1);
            pose.body_pose[8] = AxisAngle::new(bend * 0.3, 0.0, 0.0);
            let base = forward_kinematics(&t, &pose).unwrap();
            let r = axis_angle_to_matrix(AxisAngle::new(rx, ry, rz)).0;
            pose.root_orient = AxisAngle::new(rx, ry, rz);
            pose.root_trans = Vector3::new(tx, 0.0, tz);
            let moved = forward_kinematics(&t, &pose).unwrap();
            let root = base.joints[0];
            for j in 0..t.joint_count() {
                let expected = r * (base.joints[j] - root) + root + pose.root_trans;
                prop_assert!((moved.joints[j] - expected).norm() < 1e-9);
            }
        }
    }
}
