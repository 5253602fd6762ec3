//! Differentiable kinematics, skinning and projection on a [`Tape`].

use std::rc::Rc;

use nalgebra::Vector3;

use super::camera::{Camera, MIN_DEPTH};
use super::kinematics::ShapedTemplate;
use super::template::SkeletonTemplate;
use crate::autodiff::{SkinData, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Per-joint world rotations (`r×9`) and positions (`r×3`).
pub struct TapePosed<'t> {
    pub rotations: Vec<Var<'t>>,
    pub joints: Vec<Var<'t>>,
}

impl<'t> TapePosed<'t> {
    /// Joint positions as one `r×3K` tensor.
    pub fn joints_row(&self) -> Result<Var<'t>> {
        Var::concat(&self.joints)
    }

    pub fn rotations_row(&self) -> Result<Var<'t>> {
        Var::concat(&self.rotations)
    }
}

fn tiled(rows: usize, v: &Vector3<f64>) -> Tensor {
    Tensor::from_fn(rows, 3, |_, c| v[c])
}

/// Forward kinematics over `r` rows. `locals` holds one `r×9` local rotation
/// per joint (root first); `root_trans` is `r×3` or absent.
pub fn forward_kinematics<'t>(
    tape: &'t Tape,
    parents: &[Option<usize>],
    rest_joints: &[Vector3<f64>],
    locals: &[Var<'t>],
    root_trans: Option<Var<'t>>,
) -> Result<TapePosed<'t>> {
    if locals.len() != parents.len() || rest_joints.len() != parents.len() {
        return Err(Error::DimensionMismatch {
            expected: parents.len(),
            got: locals.len(),
        });
    }
    let rows = locals.first().map(|l| l.shape().0).unwrap_or(1);
    let mut rotations: Vec<Var<'t>> = Vec::with_capacity(parents.len());
    let mut joints: Vec<Var<'t>> = Vec::with_capacity(parents.len());
    for (j, parent) in parents.iter().enumerate() {
        match *parent {
            None => {
                let rest = tape.constant(tiled(rows, &rest_joints[j]));
                joints.push(match root_trans {
                    Some(t) => rest.add(t)?,
                    None => rest,
                });
                rotations.push(locals[j]);
            }
            Some(p) => {
                let offset = tape.constant(tiled(rows, &(rest_joints[j] - rest_joints[p])));
                joints.push(rotations[p].block_rotate(offset)?.add(joints[p])?);
                rotations.push(rotations[p].block_matmul(locals[j])?);
            }
        }
    }
    Ok(TapePosed { rotations, joints })
}

/// Skinning influences for the selected vertices (all when `subset` is
/// `None`).
pub fn skin_data(tpl: &SkeletonTemplate, shaped: &ShapedTemplate, subset: Option<&[usize]>) -> Rc<SkinData> {
    let all: Vec<usize>;
    let ids = match subset {
        Some(s) => s,
        None => {
            all = (0..tpl.vertex_count()).collect();
            &all
        }
    };
    let influences = ids
        .iter()
        .map(|&v| {
            tpl.skin_weights[v]
                .iter()
                .map(|&(j, w)| {
                    let off = shaped.vertices[v] - shaped.rest_joints[j];
                    (j, w, [off.x, off.y, off.z])
                })
                .collect()
        })
        .collect();
    Rc::new(SkinData {
        joint_count: tpl.joint_count(),
        influences,
    })
}

/// Pixel projections of a `1×3K` joint row as a `K×2` tensor, together with
/// the per-joint behind-camera flags. Joints behind the camera project to
/// the principal point with no dependence on the input.
pub fn project_joints<'t>(camera: &Camera, joints: Var<'t>) -> Result<(Var<'t>, Vec<bool>)> {
    let tape = joints.tape();
    let (rows, cols) = joints.shape();
    if rows != 1 || cols % 3 != 0 {
        return Err(Error::ShapeMismatch {
            op: "project_joints",
            lhs: (rows, cols),
            rhs: (1, 3),
        });
    }
    let k = cols / 3;
    let r = camera.rotation.0;
    let rot = tape.constant(Tensor::from_fn(1, 9 * k, |_, c| r[((c % 9) / 3, c % 3)]));
    let t = tape.constant(Tensor::from_fn(1, 3 * k, |_, c| camera.translation[c % 3]));
    let p = rot.block_rotate(joints)?.add(t)?.reshape(k, 3)?;
    let depth = p.value();
    let behind: Vec<bool> = (0..k).map(|i| depth.get(i, 2) <= MIN_DEPTH).collect();
    let keep = tape.constant(Tensor::from_fn(k, 1, |i, _| if behind[i] { 0.0 } else { 1.0 }));
    let fill = tape.constant(Tensor::from_fn(k, 1, |i, _| if behind[i] { 1.0 } else { 0.0 }));
    let z = p.slice(2, 1)?.mul(keep)?.add(fill)?;
    let u = p.slice(0, 1)?.mul(keep)?.div(z)?.scale(camera.focal[0]).offset(camera.principal[0]);
    let v = p.slice(1, 1)?.mul(keep)?.div(z)?.scale(camera.focal[1]).offset(camera.principal[1]);
    Ok((Var::concat(&[u, v])?, behind))
}
