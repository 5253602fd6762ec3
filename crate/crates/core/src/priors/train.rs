use std::hash::{DefaultHasher, Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{LossContext, LossTerms, PoseBatch};
use super::model::PriorModel;
use super::{PriorConfig, PriorKind};
use crate::autodiff::{Tape, Tensor};
use crate::biomech::RomTable;
use crate::body_model::{forward_kinematics, PoseParams, SkeletonTemplate};
use crate::error::{Error, Result};
use crate::rotations::AxisAngle;

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, gi) in g.data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss terms of every step's sampled minibatch.
    pub curve: Vec<LossTerms>,
    /// `(step, total)` of the deterministic validation loss.
    pub validation: Vec<(usize, f64)>,
    pub best_step: usize,
}

fn dataset_hash(data: &[Vec<AxisAngle>]) -> String {
    let mut h = DefaultHasher::new();
    for pose in data {
        for a in pose {
            for v in a.as_array() {
                v.to_bits().hash(&mut h);
            }
        }
    }
    format!("{:016x}", h.finish())
}

fn as_refs(data: &[Vec<AxisAngle>]) -> Vec<&[AxisAngle]> {
    data.iter().map(Vec::as_slice).collect()
}

/// Trains a prior without progress reporting.
pub fn train(
    config: &PriorConfig,
    data: &[Vec<AxisAngle>],
    validation: Option<&[Vec<AxisAngle>]>,
    tpl: &SkeletonTemplate,
    rom: &RomTable,
) -> Result<(PriorModel, TrainReport)> {
    train_with(config, data, validation, tpl, rom, &mut |_, _| {})
}

/// Adam training on `data`. With a validation set the parameters with the
/// lowest validation loss are returned; otherwise the final ones.
pub fn train_with(
    config: &PriorConfig,
    data: &[Vec<AxisAngle>],
    validation: Option<&[Vec<AxisAngle>]>,
    tpl: &SkeletonTemplate,
    rom: &RomTable,
    observer: &mut dyn FnMut(usize, &LossTerms),
) -> Result<(PriorModel, TrainReport)> {
    config.validate()?;
    let ctx = LossContext::new(config.kind, tpl, rom)?;
    let full = ctx.batch(&as_refs(data))?;
    let val = validation.filter(|v| !v.is_empty()).map(|v| ctx.batch(&as_refs(v))).transpose()?;

    let mut model = PriorModel::init(config)?;
    let mut adam = Adam::new(config.learning_rate, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..full.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;

    for step in 0..config.steps {
        let batch: PoseBatch = if full.len() <= config.batch_size {
            full.clone()
        } else {
            let mut ids = Vec::with_capacity(config.batch_size);
            while ids.len() < config.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                ids.push(order[cursor]);
                cursor += 1;
            }
            full.rows(&ids)
        };
        let noise = Tensor::from_fn(batch.len(), config.latent_dim, |_, _| rng.sample(StandardNormal));

        let tape = Tape::new();
        let bound = model.bind(&tape, true);
        let (total, terms) = ctx.model_loss(&bound, &batch, Some(noise), &config.weights)?;
        if !terms.total.is_finite() {
            return Err(Error::DivergedTraining { step });
        }
        let grads = tape.gradient(total, &bound.params)?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedTraining { step });
        }
        adam.update(&mut model.params, &grads);
        observer(step, &terms);
        report.curve.push(terms);

        if let Some(val) = &val {
            if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
                let tape = Tape::new();
                let bound = model.bind(&tape, false);
                let (_, vt) = ctx.model_loss(&bound, val, None, &config.weights)?;
                report.validation.push((step + 1, vt.total));
                if best.as_ref().is_none_or(|(b, _)| vt.total < *b) {
                    best = Some((vt.total, model.params.clone()));
                    report.best_step = step + 1;
                }
            }
        }
    }
    match best {
        Some((_, params)) => model.params = params,
        None => report.best_step = config.steps,
    }
    model.meta.dataset_hash = dataset_hash(data);
    model.meta.dataset_size = data.len();
    model.meta.steps = config.steps;
    model.meta.best_step = report.best_step;
    model.meta.loss_curve = report.curve.iter().map(|t| t.total).collect();
    Ok((model, report))
}

/// Mean joint position error in millimeters between each pose and its
/// reconstruction through the posterior mean, measured over the modeled
/// joints with everything else at rest.
pub fn recon_mpjpe(model: &PriorModel, poses: &[Vec<AxisAngle>], tpl: &SkeletonTemplate) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::InvalidInput("no poses to evaluate".into()));
    }
    let kind = model.kind();
    let range = match kind {
        PriorKind::Body => tpl.body_range(),
        PriorKind::Hand => tpl.right_hand_range(),
    };
    let place = |pose: &[AxisAngle]| {
        let mut p = PoseParams::zero(tpl.body_joint_count, tpl.hand_joint_count, tpl.shape_count());
        match kind {
            PriorKind::Body => p.body_pose = pose.to_vec(),
            PriorKind::Hand => p.right_hand_pose = pose.to_vec(),
        }
        p
    };
    let mut total = 0.0;
    for pose in poses {
        let (mu, _) = model.encode_axis_angles(pose)?;
        let recon = model.decode(&mu)?.axis_angles;
        let a = forward_kinematics(tpl, &place(pose))?;
        let b = forward_kinematics(tpl, &place(&recon))?;
        total += range.clone().map(|j| (a.joints[j] - b.joints[j]).norm()).sum::<f64>() / range.len() as f64;
    }
    Ok(1000.0 * total / poses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{generate, ProceduralConfig};

    fn poses(seed: u64, n: usize, j: usize) -> Vec<Vec<AxisAngle>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..j)
                    .map(|_| AxisAngle::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)))
                    .collect()
            })
            .collect()
    }

    fn small(kind: PriorKind) -> PriorConfig {
        PriorConfig {
            hidden: 32,
            latent_dim: 6,
            steps: 60,
            batch_size: 8,
            eval_every: 20,
            seed: 3,
            ..PriorConfig::new(kind)
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![Tensor::row(vec![3.0, -2.0])];
        let mut adam = Adam::new(0.1, &p);
        for _ in 0..500 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            adam.update(&mut p, &g);
        }
        assert!(p[0].max_abs() < 1e-2);
    }

    #[test]
    fn same_seed_same_curve() {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let rom = RomTable::default_table();
        let data = poses(1, 12, 15);
        let (a, ra) = train(&small(PriorKind::Hand), &data, None, &tpl, &rom).unwrap();
        let (b, rb) = train(&small(PriorKind::Hand), &data, None, &tpl, &rom).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert!(ra.curve.iter().all(|t| t.kl >= 0.0));
    }

    #[test]
    fn training_reduces_loss_and_error() {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let rom = RomTable::default_table();
        let data = poses(2, 8, 21);
        let mut cfg = small(PriorKind::Body);
        cfg.steps = 300;
        let before = recon_mpjpe(&PriorModel::init(&cfg).unwrap(), &data, &tpl).unwrap();
        let (model, report) = train(&cfg, &data, None, &tpl, &rom).unwrap();
        let after = recon_mpjpe(&model, &data, &tpl).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
        let first = report.curve[0].total;
        let last = report.curve.last().unwrap().total;
        assert!(last < first);
        assert_eq!(model.meta.loss_curve.len(), 300);
    }

    #[test]
    fn validation_picks_best_step() {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let rom = RomTable::default_table();
        let data = poses(4, 16, 15);
        let val = poses(5, 4, 15);
        let (_, report) = train(&small(PriorKind::Hand), &data, Some(&val), &tpl, &rom).unwrap();
        assert_eq!(report.validation.len(), 3);
        let best = report.validation.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(report.best_step, best.0);
    }

    #[test]
    fn non_finite_data_diverges_or_fails() {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let rom = RomTable::default_table();
        let mut cfg = small(PriorKind::Hand);
        cfg.learning_rate = 1e12;
        cfg.steps = 50;
        let data = poses(6, 8, 15);
        let err = train(&cfg, &data, None, &tpl, &rom).unwrap_err();
        assert!(err.is_numerical(), "{err:?}");
    }
}
