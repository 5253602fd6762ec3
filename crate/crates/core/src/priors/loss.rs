use std::rc::Rc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::model::{flatten, BoundPrior};
use super::{LossWeights, PriorKind};
use crate::autodiff::{SkinData, Tape, Tensor, Var};
use crate::biomech::{penalty_var, RomEntry, RomTable};
use crate::body_model::diff::{forward_kinematics, skin_data};
use crate::body_model::{shaped_template, SkeletonTemplate};
use crate::error::{Error, Result};
use crate::rotations::{AxisAngle, EulerConvention};

/// `0.5 Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_loss(mu: &[f64], log_var: &[f64]) -> f64 {
    mu.iter().zip(log_var).map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum()
}

/// Batch-summed KL divergence of `r×d` posterior parameters.
pub fn kl_var<'t>(mu: Var<'t>, log_var: Var<'t>) -> Result<Var<'t>> {
    let per = mu.square().add(log_var.exp())?.sub(log_var)?.offset(-1.0);
    Ok(per.sum().scale(0.5))
}

/// `z = μ + exp(log σ² / 2) · noise`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter().zip(log_var).zip(noise).map(|((m, lv), n)| m + (0.5 * lv).exp() * n).collect()
}

/// Tape version; `noise` enters as a constant.
pub fn reparameterize_var<'t>(mu: Var<'t>, log_var: Var<'t>, noise: Tensor) -> Result<Var<'t>> {
    let n = mu.tape().constant(noise);
    mu.add(log_var.scale(0.5).exp().mul(n)?)
}

/// Fixed template data the mesh and biomechanical terms need.
pub struct LossContext {
    pub kind: PriorKind,
    parents: Vec<Option<usize>>,
    rest_joints: Vec<Vector3<f64>>,
    /// First template joint of the modeled block.
    first_joint: usize,
    modeled: usize,
    skin: Rc<SkinData>,
    vertex_count: usize,
    rom: Vec<RomEntry>,
    /// Modeled-joint position of every ROM entry.
    rom_columns: Vec<usize>,
    /// `9J×9J` permutation transposing every block.
    block_transpose: Tensor,
}

impl LossContext {
    pub fn new(kind: PriorKind, tpl: &SkeletonTemplate, rom: &RomTable) -> Result<Self> {
        let shaped = shaped_template(tpl, &vec![0.0; tpl.shape_count()])?;
        let (range, entries, region) = match kind {
            PriorKind::Body => (tpl.body_range(), rom.body.clone(), "fbody"),
            PriorKind::Hand => (tpl.right_hand_range(), rom.right_hand.clone(), "rhand"),
        };
        if range.len() != kind.joints() {
            return Err(Error::InvalidTemplate(format!(
                "{kind} prior needs {} joints, template has {}",
                kind.joints(),
                range.len()
            )));
        }
        let vertices = tpl.region(region)?.vertices.clone();
        let rom_columns = RomTable::indices(&entries, tpl)?
            .into_iter()
            .map(|j| {
                range
                    .clone()
                    .position(|r| r == j)
                    .ok_or_else(|| Error::InvalidInput(format!("ROM joint {j} is outside the {kind} block")))
            })
            .collect::<Result<_>>()?;
        let n = 9 * kind.joints();
        let block_transpose = Tensor::from_fn(n, n, |r, c| {
            let (br, ir) = (r / 9, r % 9);
            let (bc, ic) = (c / 9, c % 9);
            if br == bc && ic == (ir % 3) * 3 + ir / 3 {
                1.0
            } else {
                0.0
            }
        });
        Ok(LossContext {
            kind,
            parents: tpl.parents(),
            first_joint: range.start,
            modeled: range.len(),
            skin: skin_data(tpl, &shaped, Some(&vertices)),
            vertex_count: vertices.len(),
            rest_joints: shaped.rest_joints,
            rom: entries,
            rom_columns,
            block_transpose,
        })
    }

    pub fn rom(&self) -> &[RomEntry] {
        &self.rom
    }

    /// Skinned region vertices (`r×3N`) for modeled local rotations `r×9J`;
    /// all other joints stay at rest.
    pub fn vertices<'t>(&self, rotations: Var<'t>) -> Result<Var<'t>> {
        let tape = rotations.tape();
        let rows = rotations.shape().0;
        let eye = flatten(&Matrix3::identity());
        let identity = tape.constant(Tensor::from_fn(rows, 9, |_, c| eye[c]));
        let locals = (0..self.parents.len())
            .map(|j| {
                if j >= self.first_joint && j < self.first_joint + self.modeled {
                    rotations.slice(9 * (j - self.first_joint), 9)
                } else {
                    Ok(identity)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let posed = forward_kinematics(tape, &self.parents, &self.rest_joints, &locals, None)?;
        posed.rotations_row()?.skin(posed.joints_row()?, self.skin.clone())
    }

    /// Batch-summed penalty of the constrained joints.
    pub fn biomech<'t>(&self, rotations: Var<'t>) -> Result<Var<'t>> {
        let blocks = self.rom_columns.iter().map(|&c| rotations.slice(9 * c, 9)).collect::<Result<Vec<_>>>()?;
        let conventions: Vec<EulerConvention> = self.rom.iter().map(|e| e.convention).collect();
        penalty_var(Var::concat(&blocks)?.euler(&conventions)?, &self.rom)
    }

    /// Batch-summed `Σ_j ‖R_j R_jᵀ − I‖²_F` of raw blocks.
    pub fn orthogonality<'t>(&self, raw: Var<'t>) -> Result<Var<'t>> {
        let tape = raw.tape();
        let rows = raw.shape().0;
        let transposed = raw.matmul(tape.constant(self.block_transpose.clone()))?;
        let eye = flatten(&Matrix3::identity());
        let identity = tape.constant(Tensor::from_fn(rows, 9 * self.modeled, |_, c| eye[c % 9]));
        Ok(raw.block_matmul(transposed)?.sub(identity)?.square().sum())
    }

    /// Tensors describing a batch of poses.
    pub fn batch(&self, poses: &[&[AxisAngle]]) -> Result<PoseBatch> {
        if poses.is_empty() {
            return Err(Error::InvalidInput("empty pose batch".into()));
        }
        let j = self.modeled;
        if let Some(bad) = poses.iter().find(|p| p.len() != j) {
            return Err(Error::DimensionMismatch { expected: j, got: bad.len() });
        }
        let rows = poses.len();
        let rotations = Tensor::new(
            rows,
            9 * j,
            poses.iter().flat_map(|p| p.iter().flat_map(|a| flatten(&a.to_matrix().0))).collect(),
        )?;
        let axis_angles = Tensor::new(
            rows,
            3 * j,
            poses.iter().flat_map(|p| p.iter().flat_map(|a| a.canonical().as_array())).collect(),
        )?;
        let tape = Tape::new();
        let vertices = (*self.vertices(tape.constant(rotations.clone()))?.value()).clone();
        Ok(PoseBatch {
            rotations,
            axis_angles,
            vertices,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Weighted training loss for decoder output `raw` given posterior
    /// parameters and the batch it was encoded from. Every component is a
    /// batch mean; the parameter regularizer is not.
    pub fn terms<'t>(
        &self,
        batch: &PoseBatch,
        mu: Var<'t>,
        log_var: Var<'t>,
        raw: Var<'t>,
        params: &[Var<'t>],
        weights: &LossWeights,
    ) -> Result<(Var<'t>, LossTerms)> {
        let tape = mu.tape();
        let rows = batch.rotations.rows() as f64;
        let rotations = raw.project()?;
        let axis_angles = rotations.log_map()?;

        let kl = kl_var(mu, log_var)?.scale(1.0 / rows);
        let target = tape.constant(batch.axis_angles.clone());
        let recon = axis_angles.sub(target)?.square().sum().scale(1.0 / rows);
        let verts = tape.constant(batch.vertices.clone());
        let mesh = self
            .vertices(rotations)?
            .sub(verts)?
            .square()
            .sum()
            .scale(1.0 / (rows * self.vertex_count.max(1) as f64));
        let orth = self.orthogonality(raw)?.scale(1.0 / rows);
        let reg = match params {
            [] => tape.scalar(0.0),
            _ => {
                let sums = params.iter().map(|p| p.square().sum()).collect::<Vec<_>>();
                sums[1..].iter().try_fold(sums[0], |acc, s| acc.add(*s))?
            }
        };
        let biomech = self.biomech(rotations)?.scale(1.0 / rows);

        let parts = [kl, recon, mesh, orth, reg, biomech];
        let w = weights.as_array();
        let mut total = parts[0].scale(w[0]);
        for (p, c) in parts[1..].iter().zip(&w[1..]) {
            total = total.add(p.scale(*c))?;
        }
        let terms = LossTerms {
            kl: kl.item(),
            recon: recon.item(),
            mesh: mesh.item(),
            orth: orth.item(),
            reg: reg.item(),
            biomech: biomech.item(),
            total: total.item(),
        };
        Ok((total, terms))
    }

    /// Full forward pass of `prior` on `batch`. With `noise` the latent is
    /// sampled; without it the posterior mean is decoded.
    pub fn model_loss<'t>(
        &self,
        prior: &BoundPrior<'t>,
        batch: &PoseBatch,
        noise: Option<Tensor>,
        weights: &LossWeights,
    ) -> Result<(Var<'t>, LossTerms)> {
        let tape = prior.params[0].tape();
        let (mu, log_var) = prior.encode(tape.constant(batch.rotations.clone()))?;
        let z = match noise {
            Some(n) => reparameterize_var(mu, log_var, n)?,
            None => mu,
        };
        let decoded = prior.decode(z)?;
        self.terms(batch, mu, log_var, decoded.raw, &prior.params, weights)
    }
}

/// Input poses as flattened rotations (`r×9J`), canonical axis-angles
/// (`r×3J`) and skinned region vertices (`r×3N`).
#[derive(Debug, Clone)]
pub struct PoseBatch {
    pub rotations: Tensor,
    pub axis_angles: Tensor,
    pub vertices: Tensor,
}

impl PoseBatch {
    pub fn len(&self) -> usize {
        self.rotations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self, ids: &[usize]) -> PoseBatch {
        let pick = |t: &Tensor| Tensor::from_fn(ids.len(), t.cols(), |r, c| t.get(ids[r], c));
        PoseBatch {
            rotations: pick(&self.rotations),
            axis_angles: pick(&self.axis_angles),
            vertices: pick(&self.vertices),
        }
    }
}

/// Unweighted loss components and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub kl: f64,
    pub recon: f64,
    pub mesh: f64,
    pub orth: f64,
    pub reg: f64,
    pub biomech: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn components(&self) -> [f64; 6] {
        [self.kl, self.recon, self.mesh, self.orth, self.reg, self.biomech]
    }

    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        self.components().iter().zip(w.as_array()).map(|(c, w)| c * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::biomech::rotation_penalty;
    use crate::body_model::{generate, ProceduralConfig};
    use crate::priors::{BoundPrior, PriorConfig, PriorModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_poses(rng: &mut ChaCha8Rng, n: usize, j: usize, scale: f64) -> Vec<Vec<AxisAngle>> {
        (0..n)
            .map(|_| {
                (0..j)
                    .map(|_| {
                        AxisAngle::new(
                            rng.random_range(-scale..scale),
                            rng.random_range(-scale..scale),
                            rng.random_range(-scale..scale),
                        )
                    })
                    .collect()
            })
            .collect()
    }

    fn refs(p: &[Vec<AxisAngle>]) -> Vec<&[AxisAngle]> {
        p.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_loss(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!((kl_loss(&[1.0, 0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mu: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lv: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut oracle = 0.0;
            for i in 0..5 {
                let var = lv[i].exp();
                oracle += 0.5 * (mu[i] * mu[i] + var - 1.0 - var.ln());
            }
            let k = kl_loss(&mu, &lv);
            assert!(k >= 0.0 && (k - oracle).abs() < 1e-12);
            let tape = Tape::new();
            let v = kl_var(tape.constant(Tensor::row(mu)), tape.constant(Tensor::row(lv))).unwrap();
            assert!((v.item() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn reparameterization() {
        assert_eq!(reparameterize(&[0.3], &[1.2], &[0.0]), vec![0.3]);
        assert_eq!(reparameterize(&[0.3], &[0.0], &[0.5]), vec![0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lv = 0.7f64;
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| reparameterize(&[0.0], &[lv], &[rng.sample(StandardNormal)])[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / lv.exp() - 1.0).abs() < 0.05);
        // Gradient reaches μ and log σ² but not the noise.
        let tape = Tape::new();
        let mu = tape.var(Tensor::row(vec![0.1]));
        let l = tape.var(Tensor::row(vec![0.4]));
        let z = reparameterize_var(mu, l, Tensor::row(vec![2.0])).unwrap();
        let g = tape.gradient(z, &[mu, l]).unwrap();
        assert_eq!(g[0].data(), &[1.0]);
        assert!((g[1].data()[0] - 0.5 * 0.2f64.exp() * 2.0).abs() < 1e-15);
    }

    #[test]
    fn identity_autoencoder_isolates_reg_and_biomech() {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let rom = RomTable::default_table();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [PriorKind::Body, PriorKind::Hand] {
            let ctx = LossContext::new(kind, &tpl, &rom).unwrap();
            let poses = random_poses(&mut rng, 4, kind.joints(), 1.2);
            let batch = ctx.batch(&refs(&poses)).unwrap();
            let tape = Tape::new();
            let mu = tape.constant(Tensor::zeros(4, 3));
            let lv = tape.constant(Tensor::zeros(4, 3));
            let raw = tape.constant(batch.rotations.clone());
            let params = [tape.var(Tensor::row(vec![1.0, -2.0])), tape.var(Tensor::row(vec![0.5]))];
            let w = LossWeights::for_kind(kind);
            let (total, terms) = ctx.terms(&batch, mu, lv, raw, &params, &w).unwrap();
            assert_eq!(terms.kl, 0.0);
            assert!(terms.recon < 1e-24 && terms.mesh < 1e-24 && terms.orth < 1e-24);
            assert_eq!(terms.reg, 5.25);
            let idx = RomTable::indices(ctx.rom(), &tpl).unwrap();
            let first = match kind {
                PriorKind::Body => 1,
                PriorKind::Hand => tpl.right_hand_range().start,
            };
            let oracle: f64 = poses
                .iter()
                .map(|p| {
                    let constrained: Vec<AxisAngle> = idx.iter().map(|&j| p[j - first]).collect();
                    rotation_penalty(&constrained, ctx.rom()).unwrap()
                })
                .sum::<f64>()
                / 4.0;
            assert!(oracle > 0.0);
            assert!((terms.biomech - oracle).abs() < 1e-9 * oracle.max(1.0));
            let expected = w.reg * 5.25 + w.biomech * oracle;
            assert!((total.item() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_act_linearly() {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let rom = RomTable::default_table();
        let ctx = LossContext::new(PriorKind::Body, &tpl, &rom).unwrap();
        let mut cfg = PriorConfig::new(PriorKind::Body);
        cfg.hidden = 16;
        cfg.latent_dim = 5;
        let model = PriorModel::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let poses = random_poses(&mut rng, 3, 21, 1.0);
        let batch = ctx.batch(&refs(&poses)).unwrap();
        let noise = Tensor::from_fn(3, 5, |_, _| rng.sample(StandardNormal));
        let eval = |w: &LossWeights| {
            let tape = Tape::new();
            let bound = model.bind(&tape, false);
            ctx.model_loss(&bound, &batch, Some(noise.clone()), w).unwrap().1
        };
        let w = cfg.weights;
        let base = eval(&w);
        assert!(base.components().iter().all(|c| *c >= 0.0));
        assert!((base.total - base.weighted_sum(&w)).abs() < 1e-10 * base.total);
        let doubled = eval(&LossWeights {
            biomech: 2.0 * w.biomech,
            ..w
        });
        assert!((doubled.total - base.total - w.biomech * base.biomech).abs() < 1e-10 * base.total.max(1.0));
        assert_eq!(doubled.components(), base.components());
    }

    #[test]
    fn training_loss_gradient_matches_finite_differences() {
        let tpl = generate(&ProceduralConfig::default()).unwrap();
        let rom = RomTable::default_table();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for kind in [PriorKind::Body, PriorKind::Hand] {
            let ctx = LossContext::new(kind, &tpl, &rom).unwrap();
            let mut cfg = PriorConfig::new(kind);
            cfg.hidden = 8;
            cfg.latent_dim = 4;
            cfg.seed = 5;
            let model = PriorModel::init(&cfg).unwrap();
            let poses = random_poses(&mut rng, 2, kind.joints(), 1.3);
            let batch = ctx.batch(&refs(&poses)).unwrap();
            let noise = Tensor::from_fn(2, 4, |_, _| rng.sample(StandardNormal));
            let flat: Vec<f64> = model.params.iter().flat_map(|p| p.data().to_vec()).collect();
            // Probe a random subset of coordinates, always including the
            // decoder output bias that carries the identity.
            let n = flat.len();
            let mut probe: Vec<usize> = (0..40).map(|_| rng.random_range(0..n)).collect();
            probe.extend(n - 9 * kind.joints()..n - 9 * kind.joints() + 9);
            probe.sort_unstable();
            probe.dedup();
            let build = gradcheck::objective(|tape, x| {
                // Each parameter is its fixed value plus a one-hot scatter of
                // the probed coordinates, so only those are tape inputs.
                let mut offset = 0;
                let mut params = Vec::new();
                for p in &model.params {
                    let (r, c) = p.shape();
                    let mut base = p.clone();
                    let hits: Vec<(usize, usize)> = probe
                        .iter()
                        .enumerate()
                        .filter(|(_, &i)| i >= offset && i < offset + r * c)
                        .map(|(k, &i)| (k, i - offset))
                        .collect();
                    for &(_, local) in &hits {
                        base.data_mut()[local] = 0.0;
                    }
                    let mut scatter = Tensor::zeros(probe.len(), r * c);
                    for &(k, local) in &hits {
                        scatter.set(k, local, 1.0);
                    }
                    let spread = x.matmul(tape.constant(scatter))?.reshape(r, c)?;
                    params.push(tape.constant(base).add(spread)?);
                    offset += r * c;
                }
                let bound = BoundPrior::from_params(params, &cfg)?;
                Ok(ctx.model_loss(&bound, &batch, Some(noise.clone()), &cfg.weights)?.0)
            });
            let x: Vec<f64> = probe.iter().map(|&i| flat[i]).collect();
            let err = gradcheck::check(&build, &x, 1).unwrap();
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }
}
