use serde::{Deserialize, Serialize};

use super::keypoints::{Handedness, KeypointFrame};
use super::lbfgs::{lbfgs_minimize, LbfgsSettings, Termination};
use super::objective::{build, FitProblem, FrameObjective, Layout, TermValues};
use crate::autodiff::{Tape, Tensor};
use crate::body_model::PoseParams;
use crate::error::{Error, Result};

pub const FIT_SCHEMA_VERSION: u32 = 1;

/// Joints used to place the root before the full fit.
pub const TORSO_JOINTS: [&str; 10] = [
    "pelvis",
    "spine1",
    "spine2",
    "spine3",
    "neck",
    "head",
    "left_collar",
    "right_collar",
    "left_shoulder",
    "right_shoulder",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub zbar: Vec<f64>,
    pub eps_left: Option<Vec<f64>>,
    pub eps_right: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: usize,
    pub handedness: Handedness,
    pub pose: PoseParams,
    pub latents: Latents,
    /// Terms at the solution; absent when the frame failed.
    pub terms: Option<TermValues>,
    pub initial_objective: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Option<Termination>,
    /// Objective after every accepted iteration.
    pub trace: Vec<f64>,
    /// Whether the previous frame's solution was used as the starting point.
    pub warm_started: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub frames: Vec<FrameResult>,
}

impl FitResult {
    pub fn failures(&self) -> impl Iterator<Item = &FrameResult> {
        self.frames.iter().filter(|f| f.error.is_some())
    }

    pub fn poses(&self) -> Vec<PoseParams> {
        self.frames.iter().map(|f| f.pose.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: FitResult = serde_json::from_str(text)?;
        if r.schema_version != FIT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: FIT_SCHEMA_VERSION,
                found: r.schema_version,
            });
        }
        Ok(r)
    }
}

fn latents(layout: &Layout, x: &[f64]) -> Latents {
    Latents {
        zbar: x[layout.zbar.clone()].to_vec(),
        eps_left: layout.eps_left.clone().map(|r| x[r].to_vec()),
        eps_right: layout.eps_right.clone().map(|r| x[r].to_vec()),
    }
}

/// Fits the root alone to the torso keypoints with every joint rotation held
/// at its starting value.
pub fn prealign(objective: &FrameObjective, x0: &[f64], settings: &LbfgsSettings) -> Result<Vec<f64>> {
    let tpl = objective.problem.tpl;
    let mut setup = objective.setup.clone();
    for (i, w) in setup.weights.iter_mut().enumerate() {
        if !TORSO_JOINTS.contains(&tpl.joints[i].name.as_str()) {
            *w = 0.0;
        }
    }
    if setup.weights.iter().all(|w| *w == 0.0) {
        return Ok(x0.to_vec());
    }
    let l = setup.layout.clone();
    let root: Vec<usize> = l.root_orient.clone().chain(l.root_trans.clone()).collect();
    let mut f = |r: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut x = x0.to_vec();
        for (k, &i) in root.iter().enumerate() {
            x[i] = r[k];
        }
        let tape = Tape::new();
        let v = tape.var(Tensor::row(x));
        let built = build(&objective.problem, &setup, &tape, v)?;
        let g = tape.gradient(built.terms[0], &[v])?;
        Ok((built.terms[0].item(), root.iter().map(|&i| g[0].data()[i]).collect()))
    };
    let start: Vec<f64> = root.iter().map(|&i| x0[i]).collect();
    let out = lbfgs_minimize(&mut f, &start, settings)?;
    let mut x = x0.to_vec();
    for (k, &i) in root.iter().enumerate() {
        x[i] = out.x[k];
    }
    Ok(x)
}

/// Solution of one frame plus the optimizer state it ended in.
#[derive(Debug, Clone)]
pub struct FrameSolution {
    pub result: FrameResult,
    pub x: Vec<f64>,
    pub layout: Layout,
}

/// Fits a single frame. `warm` is a previous solution tried as an
/// alternative starting point when its layout matches.
pub fn fit_frame(
    problem: FitProblem,
    frame: &KeypointFrame,
    init: &PoseParams,
    prev_body: Option<Vec<f64>>,
    warm: Option<(&Layout, &[f64])>,
) -> Result<FrameSolution> {
    let objective = FrameObjective::new(problem, frame, init, prev_body)?;
    let layout = objective.setup.layout.clone();
    let mut x0 = objective.initial_vector(&init.root_orient, &init.root_trans)?;
    if problem.weights.prealign {
        x0 = prealign(&objective, &x0, &problem.weights.lbfgs)?;
    }
    let (mut f0, _) = objective.value_and_gradient(&x0)?;
    let mut warm_started = false;
    if let Some((wl, wx)) = warm {
        if *wl == layout && wx.len() == layout.len {
            if let Ok((fw, _)) = objective.value_and_gradient(wx) {
                if fw.is_finite() && fw < f0 {
                    x0 = wx.to_vec();
                    f0 = fw;
                    warm_started = true;
                }
            }
        }
    }
    let mut f = |x: &[f64]| objective.value_and_gradient(x);
    let out = lbfgs_minimize(&mut f, &x0, &problem.weights.lbfgs)?;
    let terms = objective.terms(&out.x)?;
    let pose = objective.pose(&out.x)?;
    Ok(FrameSolution {
        result: FrameResult {
            frame: frame.frame,
            handedness: frame.handedness,
            pose,
            latents: latents(&layout, &out.x),
            terms: Some(terms),
            initial_objective: Some(f0),
            iterations: out.iterations,
            evaluations: out.evaluations,
            converged: out.converged(),
            termination: Some(out.termination),
            trace: out.trace,
            warm_started,
            error: None,
        },
        x: out.x,
        layout,
    })
}

/// Fits frames in order. `inits` holds one pose per frame or a single pose
/// shared by all frames. A frame that fails is recorded with its error and
/// its initialization, and the sequence continues.
pub fn fit_sequence(problem: FitProblem, frames: &[KeypointFrame], inits: &[PoseParams]) -> Result<FitResult> {
    problem.weights.validate()?;
    problem.priors.validate()?;
    if inits.len() != 1 && inits.len() != frames.len() {
        return Err(Error::DimensionMismatch {
            expected: frames.len(),
            got: inits.len(),
        });
    }
    if frames.windows(2).any(|w| w[1].frame <= w[0].frame) {
        return Err(Error::InvalidInput("frame indices must be strictly increasing".into()));
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut prev: Option<(Vec<f64>, FrameSolution)> = None;
    for (t, frame) in frames.iter().enumerate() {
        let init = if inits.len() == 1 { &inits[0] } else { &inits[t] };
        let prev_body = prev.as_ref().map(|(b, _)| b.clone());
        let warm = prev.as_ref().map(|(_, s)| (&s.layout, s.x.as_slice()));
        match fit_frame(problem, frame, init, prev_body, warm) {
            Ok(sol) => {
                out.push(sol.result.clone());
                prev = Some((sol.result.pose.body_vector(), sol));
            }
            Err(e) => out.push(FrameResult {
                frame: frame.frame,
                handedness: frame.handedness,
                pose: init.clone(),
                latents: Latents::default(),
                terms: None,
                initial_objective: None,
                iterations: 0,
                evaluations: 0,
                converged: false,
                termination: None,
                trace: Vec::new(),
                warm_started: false,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(FitResult {
        schema_version: FIT_SCHEMA_VERSION,
        frames: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::test_support::Fixture;

    #[test]
    fn fitting_reduces_the_objective() {
        let fx = Fixture::new();
        let gt = fx.pose(1);
        let frame = fx.frame(&gt, 0, Handedness::TwoHanded);
        let sol = fit_frame(fx.problem(), &frame, &fx.pose(2), None, None).unwrap();
        let r = &sol.result;
        let terms = r.terms.unwrap();
        assert!(terms.objective < r.initial_objective.unwrap());
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.latents.zbar.len(), fx.body.latent_dim());
        assert!(r.pose.is_finite());
    }

    #[test]
    fn prealignment_recovers_a_translated_root() {
        let fx = Fixture::new();
        let gt = fx.pose(1);
        let frame = fx.frame(&gt, 0, Handedness::TwoHanded);
        let mut init = gt.clone();
        init.root_trans += nalgebra::Vector3::new(0.08, -0.05, 0.1);
        let obj = FrameObjective::new(fx.problem(), &frame, &init, None).unwrap();
        let x0 = obj.initial_vector(&init.root_orient, &init.root_trans).unwrap();
        let x = prealign(&obj, &x0, &fx.weights.lbfgs).unwrap();
        let l = &obj.setup.layout;
        let t: Vec<f64> = x[l.root_trans.clone()].to_vec();
        let err = ((t[0] - gt.root_trans.x).powi(2) + (t[1] - gt.root_trans.y).powi(2) + (t[2] - gt.root_trans.z).powi(2)).sqrt();
        assert!(err < 0.02, "root error {err}");
        assert_eq!(&x[l.zbar.clone()], &x0[l.zbar.clone()]);
    }

    #[test]
    fn sequence_records_failures_and_continues() {
        let fx = Fixture::new();
        let frames: Vec<KeypointFrame> = (0..3)
            .map(|t| {
                let mut f = fx.frame(&fx.pose(t as u64), t, Handedness::TwoHanded);
                if t == 1 {
                    f.keypoints[3] = [f64::NAN, 0.0];
                }
                f
            })
            .collect();
        let init = fx.pose(20);
        let out = fit_sequence(fx.problem(), &frames, std::slice::from_ref(&init)).unwrap();
        assert_eq!(out.frames.len(), 3);
        assert_eq!(out.failures().count(), 1);
        assert_eq!(out.frames[1].pose, init);
        assert!(out.frames[2].error.is_none());
        assert!(out.frames[2].terms.unwrap().temporal > 0.0);

        let back = FitResult::from_json(&out.to_json().unwrap()).unwrap();
        assert_eq!(back, out);
        let mut bad = out.clone();
        bad.schema_version = 99;
        assert!(matches!(FitResult::from_json(&bad.to_json().unwrap()), Err(Error::SchemaVersion { .. })));
    }

    #[test]
    fn sequence_input_validation() {
        let fx = Fixture::new();
        let a = fx.frame(&fx.pose(1), 3, Handedness::TwoHanded);
        let b = fx.frame(&fx.pose(1), 2, Handedness::TwoHanded);
        let init = fx.pose(1);
        assert!(fit_sequence(fx.problem(), &[a.clone(), b], std::slice::from_ref(&init)).is_err());
        assert!(matches!(
            fit_sequence(fx.problem(), std::slice::from_ref(&a), &[init.clone(), init.clone()]),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut problem = fx.problem();
        problem.priors.body = &fx.hand;
        assert!(matches!(fit_sequence(problem, &[a], &[init]), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn repeated_frame_warm_starts_from_the_previous_solution() {
        let fx = Fixture::new();
        let gt = fx.pose(1);
        let frames = vec![fx.frame(&gt, 0, Handedness::OneHandedLeft), fx.frame(&gt, 1, Handedness::OneHandedLeft)];
        let out = fit_sequence(fx.problem(), &frames, &[fx.pose(30)]).unwrap();
        assert!(out.frames[1].warm_started);
        let (a, b) = (out.frames[0].terms.unwrap(), out.frames[1].terms.unwrap());
        assert!(b.joint <= a.joint * (1.0 + 1e-9) + 1e-12);
    }
}
