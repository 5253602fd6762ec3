use std::ops::Range;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::collision::{penetration_var, CollisionProxies};
use super::keypoints::{decision_mask, lower_body_joints, non_dominant_joints, Handedness, KeypointFrame};
use super::lbfgs::LbfgsSettings;
use super::robust::{geman_mcclure, gm_of_squared, gm_squared_var, gm_var};
use crate::autodiff::{Tape, Tensor, Var};
use crate::biomech::{penalty_var, RomEntry, RomTable};
use crate::body_model::diff::{forward_kinematics as tape_fk, project_joints};
use crate::body_model::{forward_kinematics, shaped_template, Camera, PoseParams, SkeletonTemplate};
use crate::error::{Error, Result};
use crate::priors::{mirror_hand, mirror_rotation_signs, PriorKind, PriorModel};
use crate::rotations::{log_unchecked, AxisAngle, EulerConvention};

/// Weights and scales of the fitting objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitWeights {
    pub bprior: f64,
    pub hprior: f64,
    pub penetration: f64,
    pub temporal: f64,
    pub body_biomech: f64,
    pub hand_biomech: f64,
    /// Latent regularizers.
    pub zbar: f64,
    pub eps_left: f64,
    pub eps_right: f64,
    /// Robustifier scales: pixels for keypoints, radians otherwise.
    pub joint_sigma: f64,
    pub prior_sigma: f64,
    pub temporal_sigma: f64,
    /// Optimize explicit shoulder, elbow and wrist corrections on top of the
    /// decoded body pose.
    pub refine_arms: bool,
    /// Fit the root to torso keypoints before the full objective.
    pub prealign: bool,
    pub lbfgs: LbfgsSettings,
}

impl Default for FitWeights {
    fn default() -> Self {
        FitWeights {
            bprior: 1.0,
            hprior: 1.0,
            penetration: 0.1,
            temporal: 1.0,
            body_biomech: 1.5,
            hand_biomech: 1.5,
            zbar: 0.01,
            eps_left: 0.01,
            eps_right: 0.01,
            joint_sigma: 100.0,
            prior_sigma: 1.0,
            temporal_sigma: 1.0,
            refine_arms: false,
            prealign: true,
            lbfgs: LbfgsSettings {
                max_iterations: 300,
                gradient_tolerance: 1e-7,
                function_tolerance: 1e-13,
                ..LbfgsSettings::default()
            },
        }
    }
}

impl FitWeights {
    pub fn lambdas(&self) -> [f64; 6] {
        [
            self.bprior,
            self.hprior,
            self.penetration,
            self.temporal,
            self.body_biomech,
            self.hand_biomech,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = self
            .lambdas()
            .iter()
            .chain(&[self.zbar, self.eps_left, self.eps_right])
            .all(|v| *v >= 0.0 && v.is_finite());
        let positive = [self.joint_sigma, self.prior_sigma, self.temporal_sigma]
            .iter()
            .all(|s| *s > 0.0 && s.is_finite());
        if !nonneg || !positive {
            return Err(Error::InvalidInput(format!("invalid fit weights {self:?}")));
        }
        self.lbfgs.validate()
    }
}

/// The two trained priors.
#[derive(Debug, Clone, Copy)]
pub struct Priors<'a> {
    pub body: &'a PriorModel,
    pub hand: &'a PriorModel,
}

impl Priors<'_> {
    pub fn validate(&self) -> Result<()> {
        PriorKind::Body.expect(self.body.kind())?;
        PriorKind::Hand.expect(self.hand.kind())
    }
}

/// Inputs shared by every frame of a sequence.
#[derive(Debug, Clone, Copy)]
pub struct FitProblem<'a> {
    pub tpl: &'a SkeletonTemplate,
    pub camera: &'a Camera,
    pub priors: Priors<'a>,
    pub rom: &'a RomTable,
    pub proxies: &'a CollisionProxies,
    pub weights: &'a FitWeights,
}

/// Values of the objective's terms before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub joint: f64,
    pub bprior: f64,
    pub hprior: f64,
    pub penetration: f64,
    pub temporal: f64,
    pub body_biomech: f64,
    pub hand_biomech: f64,
    pub objective: f64,
}

impl TermValues {
    /// `L_joint + Σ λ_i L_i`.
    pub fn weighted(&self, w: &FitWeights) -> f64 {
        let terms = [
            self.bprior,
            self.hprior,
            self.penetration,
            self.temporal,
            self.body_biomech,
            self.hand_biomech,
        ];
        self.joint + terms.iter().zip(w.lambdas()).map(|(t, l)| t * l).sum::<f64>()
    }
}

/// Offsets of the optimization variables inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub zbar: Range<usize>,
    pub eps_left: Option<Range<usize>>,
    pub eps_right: Option<Range<usize>>,
    pub root_orient: Range<usize>,
    pub root_trans: Range<usize>,
    /// Body-pose index and variable range of every arm refinement.
    pub deltas: Vec<(usize, Range<usize>)>,
    pub len: usize,
}

impl Layout {
    fn new(body_latent: usize, hand_latent: usize, hands: (bool, bool), refined: &[usize]) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let zbar = take(body_latent);
        let eps_left = hands.0.then(|| take(hand_latent));
        let eps_right = hands.1.then(|| take(hand_latent));
        let root_orient = take(3);
        let root_trans = take(3);
        let deltas = refined.iter().map(|&j| (j, take(3))).collect();
        Layout {
            zbar,
            eps_left,
            eps_right,
            root_orient,
            root_trans,
            deltas,
            len: at,
        }
    }
}

/// Per-frame data derived from the keypoints, the initialization and the
/// previous solution.
#[derive(Debug, Clone)]
pub struct FrameSetup {
    pub handedness: Handedness,
    pub rest_joints: Vec<Vector3<f64>>,
    pub keypoints: Tensor,
    /// `γ·ω·mask` per template joint.
    pub weights: Vec<f64>,
    pub init: PoseParams,
    /// Body-pose entries driven by the body prior.
    pub active_body: Vec<bool>,
    pub hands: (bool, bool),
    pub prev_body: Option<Vec<f64>>,
    pub layout: Layout,
    body_rom: Vec<(usize, RomEntry)>,
    init_body: Tensor,
    init_left: Tensor,
    init_right: Tensor,
}

fn aa_row(pose: &[AxisAngle]) -> Tensor {
    Tensor::row(pose.iter().flat_map(|a| a.canonical().as_array()).collect())
}

fn rotation_row(pose: &[AxisAngle]) -> Tensor {
    Tensor::row(pose.iter().flat_map(|a| crate::priors::flatten(&a.to_matrix().0)).collect())
}

impl FrameSetup {
    pub fn new(problem: &FitProblem, frame: &KeypointFrame, init: &PoseParams, prev_body: Option<Vec<f64>>) -> Result<Self> {
        let tpl = problem.tpl;
        if init.body_pose.len() != tpl.body_joint_count
            || init.left_hand_pose.len() != tpl.hand_joint_count
            || init.right_hand_pose.len() != tpl.hand_joint_count
        {
            return Err(Error::DimensionMismatch {
                expected: tpl.joint_count(),
                got: init.joint_count(),
            });
        }
        if !init.is_finite() {
            return Err(Error::InvalidInput(format!("frame {}: initial pose is not finite", frame.frame)));
        }
        let aligned = frame.align(tpl)?;
        let mask = decision_mask(frame.handedness, tpl);
        let weights: Vec<f64> = aligned.weights.iter().zip(&mask).map(|(w, m)| w * m).collect();
        let keypoints = Tensor::new(tpl.joint_count(), 2, aligned.keypoints.iter().flatten().copied().collect())?;

        let mut active_body = vec![true; tpl.body_joint_count];
        for j in lower_body_joints(tpl).into_iter().chain(non_dominant_joints(frame.handedness, tpl)) {
            if tpl.body_range().contains(&j) {
                active_body[j - 1] = false;
            }
        }
        let body_rom: Vec<(usize, RomEntry)> = RomTable::indices(&problem.rom.body, tpl)?
            .into_iter()
            .zip(&problem.rom.body)
            .map(|(j, e)| (j - 1, e.clone()))
            .filter(|(j, _)| active_body[*j])
            .collect();
        let refined: Vec<usize> = if problem.weights.refine_arms {
            body_rom.iter().map(|(j, _)| *j).collect()
        } else {
            Vec::new()
        };
        let hands = frame.handedness.active_sides();
        let layout = Layout::new(problem.priors.body.latent_dim(), problem.priors.hand.latent_dim(), hands, &refined);
        if let Some(p) = &prev_body {
            if p.len() != 3 * tpl.body_joint_count {
                return Err(Error::DimensionMismatch {
                    expected: 3 * tpl.body_joint_count,
                    got: p.len(),
                });
            }
        }
        Ok(FrameSetup {
            handedness: frame.handedness,
            rest_joints: shaped_template(tpl, &init.shape)?.rest_joints,
            keypoints,
            weights,
            init: init.clone(),
            active_body,
            hands,
            prev_body,
            layout,
            body_rom,
            init_body: aa_row(&init.body_pose),
            init_left: aa_row(&mirror_hand(&init.left_hand_pose)),
            init_right: aa_row(&init.right_hand_pose),
        })
    }

    fn active_mask(&self) -> Tensor {
        Tensor::from_fn(1, 3 * self.active_body.len(), |_, c| if self.active_body[c / 3] { 1.0 } else { 0.0 })
    }
}

/// Every node of one objective evaluation.
pub struct Built<'t> {
    pub objective: Var<'t>,
    pub terms: [Var<'t>; 7],
    /// Final local body rotations, `1×9` each.
    pub body_locals: Vec<Var<'t>>,
    /// Decoded hand rotations in the right-hand frame, `1×135`.
    pub left_decoded: Option<Var<'t>>,
    pub right_decoded: Option<Var<'t>>,
    pub joints: Var<'t>,
    /// Template joint index and local rotation of every frozen joint. These
    /// are constants unless built by [`frozen_gradients`].
    pub frozen: Vec<(usize, Var<'t>)>,
}

fn blocks<'t>(row: Var<'t>, n: usize) -> Result<Vec<Var<'t>>> {
    (0..n).map(|j| row.slice(9 * j, 9)).collect()
}

/// Builds the objective at `x` (`1×n`) on `tape`.
pub fn build<'t>(problem: &FitProblem, setup: &FrameSetup, tape: &'t Tape, x: Var<'t>) -> Result<Built<'t>> {
    build_with(problem, setup, tape, x, false)
}

fn build_with<'t>(problem: &FitProblem, setup: &FrameSetup, tape: &'t Tape, x: Var<'t>, track_frozen: bool) -> Result<Built<'t>> {
    let tpl = problem.tpl;
    let w = problem.weights;
    let layout = &setup.layout;
    let nb = tpl.body_joint_count;
    let nh = tpl.hand_joint_count;
    let zero = tape.scalar(0.0);
    let slice = |r: &Range<usize>| x.slice(r.start, r.len());

    // Body: decoded rotations for active joints, fixed initialization elsewhere.
    let body_prior = problem.priors.body.bind(tape, false);
    let zbar = slice(&layout.zbar)?;
    let body = body_prior.decode(zbar)?;
    let decoded = blocks(body.rotations, nb)?;
    let init_rot = rotation_row(&setup.init.body_pose);
    let mut frozen = Vec::new();
    let mut freeze = |joint: usize, value: &[f64]| {
        let t = Tensor::row(value.to_vec());
        let v = if track_frozen { tape.var(t) } else { tape.constant(t) };
        frozen.push((joint, v));
        v
    };
    let mut body_locals = Vec::with_capacity(nb);
    for (j, dec) in decoded.into_iter().enumerate() {
        if !setup.active_body[j] {
            body_locals.push(freeze(j + 1, &init_rot.data()[9 * j..9 * j + 9]));
            continue;
        }
        let local = match layout.deltas.iter().find(|(k, _)| *k == j) {
            Some((_, r)) => dec.block_matmul(slice(r)?.rodrigues()?)?,
            None => dec,
        };
        body_locals.push(local);
    }

    // Hands: decoded in the right-hand frame, mirrored for the left hand.
    let hand_prior = problem.priors.hand.bind(tape, false);
    let signs = mirror_rotation_signs();
    let mirror = tape.constant(Tensor::from_fn(1, 9 * nh, |_, c| signs[c % 9]));
    let mut hand_terms = Vec::new();
    let mut decode_hand =
        |range: &Option<Range<usize>>, init: &[AxisAngle], init_aa: &Tensor, lambda: f64, left: bool| -> Result<(Vec<Var<'t>>, Option<Var<'t>>)> {
            let first = if left {
                tpl.left_hand_range().start
            } else {
                tpl.right_hand_range().start
            };
            match range {
                Some(r) => {
                    let eps = slice(r)?;
                    let out = hand_prior.decode(eps)?;
                    let dev = out.axis_angles.sub(tape.constant(init_aa.clone()))?;
                    hand_terms.push(gm_var(dev, w.prior_sigma)?.add(eps.square().sum().scale(lambda))?);
                    let placed = if left { out.rotations.mul(mirror)? } else { out.rotations };
                    Ok((blocks(placed, nh)?, Some(out.rotations)))
                }
                None => {
                    let rows = rotation_row(init);
                    Ok(((0..nh).map(|j| freeze(first + j, &rows.data()[9 * j..9 * j + 9])).collect(), None))
                }
            }
        };
    let (left_locals, left_decoded) = decode_hand(&layout.eps_left, &setup.init.left_hand_pose, &setup.init_left, w.eps_left, true)?;
    let (right_locals, right_decoded) = decode_hand(&layout.eps_right, &setup.init.right_hand_pose, &setup.init_right, w.eps_right, false)?;

    // Kinematics and reprojection.
    let root = slice(&layout.root_orient)?.rodrigues()?;
    let trans = slice(&layout.root_trans)?;
    let mut locals = vec![root];
    locals.extend(body_locals.iter().copied());
    locals.extend(left_locals);
    locals.extend(right_locals);
    let posed = tape_fk(tape, &tpl.parents(), &setup.rest_joints, &locals, Some(trans))?;
    let joints = posed.joints_row()?;
    let joint = joint_term(problem.camera, joints, setup, w.joint_sigma)?;

    let active = tape.constant(setup.active_mask());
    let final_aa = Var::concat(&body_locals)?.log_map()?;
    let bprior = gm_var(final_aa.sub(tape.constant(setup.init_body.clone()))?.mul(active)?, w.prior_sigma)?.add(zbar.square().sum().scale(w.zbar))?;
    let hprior = match hand_terms.as_slice() {
        [] => zero,
        [a] => *a,
        [a, b] => a.add(*b)?,
        _ => unreachable!("at most two hands"),
    };
    let penetration = penetration_var(joints, problem.proxies)?;

    let temporal = match &setup.prev_body {
        Some(prev) => {
            let diff = final_aa.sub(tape.constant(Tensor::row(prev.clone())))?.mul(active)?;
            gm_var(diff, w.temporal_sigma)?
        }
        None => zero,
    };

    let body_biomech = if setup.body_rom.is_empty() {
        zero
    } else {
        let rows: Vec<Var> = setup.body_rom.iter().map(|(j, _)| body_locals[*j]).collect();
        let conv: Vec<EulerConvention> = setup.body_rom.iter().map(|(_, e)| e.convention).collect();
        let entries: Vec<RomEntry> = setup.body_rom.iter().map(|(_, e)| e.clone()).collect();
        penalty_var(Var::concat(&rows)?.euler(&conv)?, &entries)?
    };
    let mut hand_biomech = zero;
    for dec in [left_decoded, right_decoded].into_iter().flatten() {
        let entries = &problem.rom.right_hand;
        let conv: Vec<EulerConvention> = entries.iter().map(|e| e.convention).collect();
        hand_biomech = hand_biomech.add(penalty_var(dec.euler(&conv)?, entries)?)?;
    }

    let terms = [joint, bprior, hprior, penetration, temporal, body_biomech, hand_biomech];
    let mut objective = joint;
    for (t, l) in terms[1..].iter().zip(w.lambdas()) {
        if l != 0.0 {
            objective = objective.add(t.scale(l))?;
        }
    }
    Ok(Built {
        objective,
        terms,
        body_locals,
        left_decoded,
        right_decoded,
        joints,
        frozen,
    })
}

/// Gradient of the objective with respect to the local rotation of every
/// frozen joint, as `(template joint, max |∂L/∂R|)`.
pub fn frozen_gradients(problem: &FitProblem, setup: &FrameSetup, x: &[f64]) -> Result<Vec<(usize, f64)>> {
    let tape = Tape::new();
    let v = tape.constant(Tensor::row(x.to_vec()));
    let built = build_with(problem, setup, &tape, v, true)?;
    let vars: Vec<Var> = built.frozen.iter().map(|(_, v)| *v).collect();
    let grads = tape.gradient(built.objective, &vars)?;
    Ok(built.frozen.iter().zip(grads).map(|((j, _), g)| (*j, g.max_abs())).collect())
}

/// `(1/|J|) Σ γ ω mask ψ(‖P(D_i) − K_i‖)`; joints behind the camera are
/// charged the robustifier's cap.
fn joint_term<'t>(camera: &Camera, joints: Var<'t>, setup: &FrameSetup, sigma: f64) -> Result<Var<'t>> {
    let tape = joints.tape();
    let (px, behind) = project_joints(camera, joints)?;
    let k = behind.len();
    let live: Vec<f64> = setup.weights.iter().zip(&behind).map(|(w, b)| if *b { 0.0 } else { *w }).collect();
    let capped: f64 = setup
        .weights
        .iter()
        .zip(&behind)
        .filter(|(_, b)| **b)
        .map(|(w, _)| w * sigma * sigma)
        .sum();
    let residual = px.sub(tape.constant(setup.keypoints.clone()))?;
    let psi = gm_squared_var(residual.square().sum_cols(), sigma)?;
    let weighted = psi.mul(tape.constant(Tensor::new(k, 1, live)?))?.sum();
    Ok(weighted.offset(capped).scale(1.0 / k as f64))
}

/// The objective of one frame as a function of the flat variable vector.
pub struct FrameObjective<'a> {
    pub problem: FitProblem<'a>,
    pub setup: FrameSetup,
}

impl<'a> FrameObjective<'a> {
    pub fn new(problem: FitProblem<'a>, frame: &KeypointFrame, init: &PoseParams, prev_body: Option<Vec<f64>>) -> Result<Self> {
        problem.weights.validate()?;
        problem.priors.validate()?;
        Ok(FrameObjective {
            setup: FrameSetup::new(&problem, frame, init, prev_body)?,
            problem,
        })
    }

    pub fn len(&self) -> usize {
        self.setup.layout.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let v = tape.var(Tensor::row(x.to_vec()));
        let built = build(&self.problem, &self.setup, &tape, v)?;
        let g = tape.gradient(built.objective, &[v])?;
        Ok((built.objective.item(), g[0].data().to_vec()))
    }

    pub fn terms(&self, x: &[f64]) -> Result<TermValues> {
        let tape = Tape::new();
        let built = build(&self.problem, &self.setup, &tape, tape.constant(Tensor::row(x.to_vec())))?;
        let t = built.terms.map(|v| v.item());
        Ok(TermValues {
            joint: t[0],
            bprior: t[1],
            hprior: t[2],
            penetration: t[3],
            temporal: t[4],
            body_biomech: t[5],
            hand_biomech: t[6],
            objective: built.objective.item(),
        })
    }

    /// Pose at `x`. Frozen joints are copied from the initialization.
    pub fn pose(&self, x: &[f64]) -> Result<PoseParams> {
        let tape = Tape::new();
        let built = build(&self.problem, &self.setup, &tape, tape.constant(Tensor::row(x.to_vec())))?;
        let init = &self.setup.init;
        let mut pose = init.clone();
        let l = &self.setup.layout;
        pose.root_orient = AxisAngle::new(x[l.root_orient.start], x[l.root_orient.start + 1], x[l.root_orient.start + 2]);
        pose.root_trans = Vector3::new(x[l.root_trans.start], x[l.root_trans.start + 1], x[l.root_trans.start + 2]);
        for (j, local) in built.body_locals.iter().enumerate() {
            if self.setup.active_body[j] {
                pose.body_pose[j] = log_unchecked(&crate::priors::unflatten(local.value().data()));
            }
        }
        let hand = |dec: &Option<Var>, mirror: bool, out: &mut Vec<AxisAngle>| {
            if let Some(d) = dec {
                let v = d.value();
                for (j, a) in out.iter_mut().enumerate() {
                    let r = log_unchecked(&crate::priors::unflatten(&v.data()[9 * j..]));
                    *a = if mirror { r.mirrored() } else { r };
                }
            }
        };
        hand(&built.left_decoded, true, &mut pose.left_hand_pose);
        hand(&built.right_decoded, false, &mut pose.right_hand_pose);
        Ok(pose)
    }

    /// Latent codes and arm corrections that reproduce `init` as closely as
    /// the priors allow: posterior means, and corrections taking each decoded
    /// arm rotation exactly to its initial value.
    pub fn initial_vector(&self, root_orient: &AxisAngle, root_trans: &Vector3<f64>) -> Result<Vec<f64>> {
        let l = &self.setup.layout;
        let init = &self.setup.init;
        let mut x = vec![0.0; l.len];
        let (zbar, _) = self.problem.priors.body.encode_axis_angles(&init.body_pose)?;
        x[l.zbar.clone()].copy_from_slice(&zbar);
        if let Some(r) = &l.eps_left {
            let (e, _) = self.problem.priors.hand.encode_axis_angles(&mirror_hand(&init.left_hand_pose))?;
            x[r.clone()].copy_from_slice(&e);
        }
        if let Some(r) = &l.eps_right {
            let (e, _) = self.problem.priors.hand.encode_axis_angles(&init.right_hand_pose)?;
            x[r.clone()].copy_from_slice(&e);
        }
        x[l.root_orient.clone()].copy_from_slice(&root_orient.as_array());
        x[l.root_trans.clone()].copy_from_slice(root_trans.as_slice());
        if !l.deltas.is_empty() {
            let decoded = self.problem.priors.body.decode(&zbar)?;
            for (j, r) in &l.deltas {
                let target = init.body_pose[*j].to_matrix().0;
                let delta = log_unchecked(&(decoded.rotations[*j].0.transpose() * target));
                x[r.clone()].copy_from_slice(&delta.as_array());
            }
        }
        Ok(x)
    }
}

/// Reprojection term evaluated directly from a pose.
pub fn joint_loss(pose: &PoseParams, camera: &Camera, tpl: &SkeletonTemplate, frame: &KeypointFrame, mask: &[f64], sigma: f64) -> Result<f64> {
    let aligned = frame.align(tpl)?;
    if mask.len() != tpl.joint_count() {
        return Err(Error::DimensionMismatch {
            expected: tpl.joint_count(),
            got: mask.len(),
        });
    }
    let posed = forward_kinematics(tpl, pose)?;
    let projected = camera.project_each(&posed.joints);
    let mut total = 0.0;
    for i in 0..tpl.joint_count() {
        let w = aligned.weights[i] * mask[i];
        if w == 0.0 {
            continue;
        }
        total += w * match projected[i] {
            Some(p) => geman_mcclure(&[p.x - aligned.keypoints[i][0], p.y - aligned.keypoints[i][1]], sigma),
            None => sigma * sigma,
        };
    }
    Ok(total / tpl.joint_count() as f64)
}

/// `ψ(θ_b(t) − θ_b(t−1))` over body-pose coordinates; zero without a
/// predecessor.
pub fn temporal_loss(pose: &PoseParams, prev: Option<&PoseParams>, sigma: f64) -> f64 {
    match prev {
        None => 0.0,
        Some(p) => {
            let d: Vec<f64> = pose.body_vector().iter().zip(p.body_vector()).map(|(a, b)| a - b).collect();
            geman_mcclure(&d, sigma)
        }
    }
}

/// `ψ(decode(ζ̄) − θ̂_b) + λ ‖ζ̄‖²`.
pub fn bprior_loss(init_body: &[AxisAngle], zbar: &[f64], prior: &PriorModel, sigma: f64, lambda: f64) -> Result<f64> {
    PriorKind::Body.expect(prior.kind())?;
    let decoded = prior.decode(zbar)?;
    Ok(pose_deviation(&decoded.axis_angles, init_body, sigma) + lambda * zbar.iter().map(|v| v * v).sum::<f64>())
}

/// Hand prior term; a hand given as `None` is masked and contributes 0.
/// The left hand's initialization is compared in the mirrored frame.
pub fn hprior_loss(
    left: Option<(&[AxisAngle], &[f64])>,
    right: Option<(&[AxisAngle], &[f64])>,
    prior: &PriorModel,
    sigma: f64,
    lambda: (f64, f64),
) -> Result<f64> {
    PriorKind::Hand.expect(prior.kind())?;
    let mut total = 0.0;
    if let Some((init, eps)) = left {
        let decoded = prior.decode(eps)?;
        total += pose_deviation(&decoded.axis_angles, &mirror_hand(init), sigma) + lambda.0 * eps.iter().map(|v| v * v).sum::<f64>();
    }
    if let Some((init, eps)) = right {
        let decoded = prior.decode(eps)?;
        total += pose_deviation(&decoded.axis_angles, init, sigma) + lambda.1 * eps.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total)
}

fn pose_deviation(a: &[AxisAngle], b: &[AxisAngle], sigma: f64) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x.canonical().0 - y.canonical().0).norm_squared()).sum();
    gm_of_squared(s, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::fitting::test_support::Fixture;

    fn start(obj: &FrameObjective) -> Vec<f64> {
        let init = &obj.setup.init;
        obj.initial_vector(&init.root_orient, &init.root_trans).unwrap()
    }

    #[test]
    fn zero_lambdas_leave_the_joint_term() {
        let mut fx = Fixture::new();
        fx.weights = FitWeights {
            bprior: 0.0,
            hprior: 0.0,
            penetration: 0.0,
            temporal: 0.0,
            body_biomech: 0.0,
            hand_biomech: 0.0,
            ..FitWeights::default()
        };
        let gt = fx.pose(1);
        let frame = fx.frame(&gt, 0, Handedness::TwoHanded);
        let obj = FrameObjective::new(fx.problem(), &frame, &fx.pose(2), Some(gt.body_vector())).unwrap();
        let t = obj.terms(&start(&obj)).unwrap();
        assert_eq!(t.objective, t.joint);
        assert!(t.joint > 0.0 && t.bprior > 0.0 && t.temporal > 0.0);
    }

    #[test]
    fn objective_is_the_weighted_sum_of_terms() {
        let fx = Fixture::new();
        let gt = fx.pose(1);
        let frame = fx.frame(&gt, 0, Handedness::TwoHanded);
        let obj = FrameObjective::new(fx.problem(), &frame, &fx.pose(3), Some(fx.pose(4).body_vector())).unwrap();
        let t = obj.terms(&start(&obj)).unwrap();
        assert!((t.weighted(&fx.weights) - t.objective).abs() <= 1e-12 * t.objective.abs());
        let (v, _) = obj.value_and_gradient(&start(&obj)).unwrap();
        assert_eq!(v, t.objective);
    }

    #[test]
    fn tape_joint_term_matches_direct_evaluation() {
        let fx = Fixture::new();
        let frame = fx.frame(&fx.pose(1), 0, Handedness::OneHandedRight);
        let obj = FrameObjective::new(fx.problem(), &frame, &fx.pose(5), None).unwrap();
        let x = start(&obj);
        let pose = obj.pose(&x).unwrap();
        let mask = decision_mask(Handedness::OneHandedRight, &fx.tpl);
        let direct = joint_loss(&pose, &fx.camera, &fx.tpl, &frame, &mask, fx.weights.joint_sigma).unwrap();
        let t = obj.terms(&x).unwrap();
        assert!((direct - t.joint).abs() < 1e-9 * direct.max(1.0), "{direct} vs {}", t.joint);
    }

    #[test]
    fn direct_prior_terms_match_the_tape() {
        let mut fx = Fixture::new();
        fx.weights.refine_arms = false;
        let frame = fx.frame(&fx.pose(1), 0, Handedness::TwoHanded);
        let init = fx.pose(6);
        let obj = FrameObjective::new(fx.problem(), &frame, &init, None).unwrap();
        let x = start(&obj);
        let l = &obj.setup.layout;
        let t = obj.terms(&x).unwrap();
        // Only active joints enter the tape's body prior; compare on a frame
        // whose masked joints coincide with the decoded pose.
        let mut masked_init = init.body_pose.clone();
        let decoded = fx.body.decode(&x[l.zbar.clone()]).unwrap();
        for (j, a) in masked_init.iter_mut().enumerate() {
            if !obj.setup.active_body[j] {
                *a = decoded.axis_angles[j];
            }
        }
        let b = bprior_loss(&masked_init, &x[l.zbar.clone()], &fx.body, 1.0, 0.01).unwrap();
        assert!((b - t.bprior).abs() < 1e-10, "{b} vs {}", t.bprior);
        let el = &x[l.eps_left.clone().unwrap()];
        let er = &x[l.eps_right.clone().unwrap()];
        let h = hprior_loss(
            Some((&init.left_hand_pose, el)),
            Some((&init.right_hand_pose, er)),
            &fx.hand,
            1.0,
            (0.01, 0.01),
        )
        .unwrap();
        assert!((h - t.hprior).abs() < 1e-10, "{h} vs {}", t.hprior);
        assert!(matches!(
            bprior_loss(&init.body_pose, el, &fx.hand, 1.0, 0.01),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn temporal_loss_oracle() {
        let fx = Fixture::new();
        let a = fx.pose(1);
        assert_eq!(temporal_loss(&a, None, 1.0), 0.0);
        assert_eq!(temporal_loss(&a, Some(&a), 1.0), 0.0);
        let mut b = a.clone();
        b.body_pose[0].0.x += 0.5;
        assert!((temporal_loss(&b, Some(&a), 1.0) - 0.25 / 1.25).abs() < 1e-12);
    }

    #[test]
    fn full_objective_gradient_check() {
        let mut fx = Fixture::new();
        fx.weights.penetration = 10.0;
        let gt = fx.pose(1);
        let frame = fx.frame(&gt, 0, Handedness::TwoHanded);
        let init = fx.pose(7);
        let obj = FrameObjective::new(fx.problem(), &frame, &init, Some(fx.pose(8).body_vector())).unwrap();
        let mut x = start(&obj);
        for (i, v) in x.iter_mut().enumerate() {
            *v += 0.01 * ((i * 7919) % 13) as f64 / 13.0;
        }
        let t = obj.terms(&x).unwrap();
        assert!(t.temporal > 0.0 && t.hprior > 0.0);
        let build_fn = gradcheck::objective(|tape, v| Ok(build(&obj.problem, &obj.setup, tape, v)?.objective));
        let err = gradcheck::check(&build_fn, &x, 1).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn frozen_variables_are_absent_and_frozen_keypoints_are_ignored() {
        let fx = Fixture::new();
        let gt = fx.pose(1);
        let mut frame = fx.frame(&gt, 0, Handedness::OneHandedRight);
        let init = fx.pose(9);
        let obj = FrameObjective::new(fx.problem(), &frame, &init, None).unwrap();
        assert!(obj.setup.layout.eps_left.is_none() && obj.setup.layout.eps_right.is_some());
        assert_eq!(obj.setup.layout.deltas.len(), 3);
        let x = start(&obj);
        let before = obj.terms(&x).unwrap();
        for j in lower_body_joints(&fx.tpl)
            .into_iter()
            .chain(non_dominant_joints(Handedness::OneHandedRight, &fx.tpl))
        {
            frame.keypoints[j] = [-1e4, 3e4];
        }
        let moved = FrameObjective::new(fx.problem(), &frame, &init, None).unwrap();
        assert_eq!(moved.terms(&x).unwrap(), before);

        let pose = obj.pose(&x).unwrap();
        assert_eq!(pose.left_hand_pose, init.left_hand_pose);
        for j in lower_body_joints(&fx.tpl)
            .into_iter()
            .chain(non_dominant_joints(Handedness::OneHandedRight, &fx.tpl))
        {
            if fx.tpl.body_range().contains(&j) {
                assert_eq!(pose.body_pose[j - 1], init.body_pose[j - 1]);
            }
        }
    }

    #[test]
    fn initial_vector_reproduces_initial_arms() {
        let fx = Fixture::new();
        let frame = fx.frame(&fx.pose(1), 0, Handedness::TwoHanded);
        let init = fx.pose(10);
        let obj = FrameObjective::new(fx.problem(), &frame, &init, None).unwrap();
        let pose = obj.pose(&start(&obj)).unwrap();
        for (j, _) in &obj.setup.layout.deltas {
            let d = pose.body_pose[*j].to_matrix().0 - init.body_pose[*j].to_matrix().0;
            assert!(d.norm() < 1e-9, "joint {j}: {d}");
        }
    }

    #[test]
    fn behind_camera_joints_pay_the_cap() {
        let fx = Fixture::new();
        let frame = fx.frame(&fx.pose(1), 0, Handedness::TwoHanded);
        let mut init = fx.pose(1);
        init.root_trans = Vector3::new(0.0, 0.0, 10.0);
        let obj = FrameObjective::new(fx.problem(), &frame, &init, None).unwrap();
        let t = obj.terms(&start(&obj)).unwrap();
        let active: f64 = obj.setup.weights.iter().sum();
        let expected = active * 100.0 * 100.0 / fx.tpl.joint_count() as f64;
        assert!((t.joint - expected).abs() < 1e-9 * expected);
        let (_, g) = obj.value_and_gradient(&start(&obj)).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lower_body_has_zero_gradient() {
        let fx = Fixture::new();
        for handedness in [Handedness::TwoHanded, Handedness::OneHandedRight] {
            let frame = fx.frame(&fx.pose(1), 0, handedness);
            let obj = FrameObjective::new(fx.problem(), &frame, &fx.pose(11), Some(fx.pose(12).body_vector())).unwrap();
            let grads = frozen_gradients(&obj.problem, &obj.setup, &start(&obj)).unwrap();
            let lower = lower_body_joints(&fx.tpl);
            assert_eq!(grads.iter().filter(|(j, _)| lower.contains(j)).count(), lower.len());
            for (j, g) in grads {
                if lower.contains(&j) {
                    assert_eq!(g, 0.0, "joint {j}");
                }
            }
        }
    }

    #[test]
    fn generating_state_costs_only_latent_regularizers() {
        let mut fx = Fixture::new();
        fx.weights.penetration = 0.0;
        fx.weights.body_biomech = 0.0;
        fx.weights.hand_biomech = 0.0;
        let zbar: Vec<f64> = (0..5).map(|i| 0.3 * (i as f64 - 2.0)).collect();
        let (el, er) = (vec![0.2; 5], vec![-0.1; 5]);
        let mut gt = fx.pose(0);
        gt.body_pose = fx.body.decode(&zbar).unwrap().axis_angles;
        gt.left_hand_pose = mirror_hand(&fx.hand.decode(&el).unwrap().axis_angles);
        gt.right_hand_pose = fx.hand.decode(&er).unwrap().axis_angles;
        let frame = fx.frame(&gt, 0, Handedness::TwoHanded);
        let obj = FrameObjective::new(fx.problem(), &frame, &gt, None).unwrap();
        let l = obj.setup.layout.clone();
        let mut x = vec![0.0; l.len];
        x[l.zbar.clone()].copy_from_slice(&zbar);
        x[l.eps_left.clone().unwrap()].copy_from_slice(&el);
        x[l.eps_right.clone().unwrap()].copy_from_slice(&er);
        x[l.root_trans.clone()].copy_from_slice(gt.root_trans.as_slice());
        let t = obj.terms(&x).unwrap();
        let reg = 0.01 * [&zbar, &el, &er].iter().flat_map(|v| v.iter()).map(|v| v * v).sum::<f64>();
        assert!(t.joint < 1e-18, "{}", t.joint);
        assert!((t.objective - reg).abs() < 1e-12, "{} vs {reg}", t.objective);
    }
}
