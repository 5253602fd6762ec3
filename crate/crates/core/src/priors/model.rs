use std::path::Path;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PriorConfig, PriorKind};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rotations::{AxisAngle, RotationMatrix};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Elementwise signs taking a flattened row-major `R` to `M R M` for the
/// sagittal reflection `M = diag(1, -1, -1)`.
pub fn mirror_rotation_signs() -> [f64; 9] {
    let s = [1.0, -1.0, -1.0];
    std::array::from_fn(|i| s[i / 3] * s[i % 3])
}

/// Maps a hand pose to the mirror-image hand.
pub fn mirror_hand(pose: &[AxisAngle]) -> Vec<AxisAngle> {
    pose.iter().map(AxisAngle::mirrored).collect()
}

pub(crate) fn flatten(m: &Matrix3<f64>) -> [f64; 9] {
    std::array::from_fn(|i| m[(i / 3, i % 3)])
}

pub(crate) fn unflatten(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(&v[..9])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub dataset_hash: String,
    pub dataset_size: usize,
    pub steps: usize,
    pub best_step: usize,
    pub loss_curve: Vec<f64>,
    pub activation: String,
}

/// A prior's configuration and weights. Parameters are stored encoder first,
/// then decoder, each as alternating `in×out` weight and `1×out` bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub config: PriorConfig,
    pub params: Vec<Tensor>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    #[serde(flatten)]
    model: PriorModel,
}

/// Output of the decoder on a tape.
pub struct Decoded<'t> {
    /// Raw decoder output, `r×9J`.
    pub raw: Var<'t>,
    /// Nearest rotations of the raw blocks.
    pub rotations: Var<'t>,
    /// Axis-angle of the projected rotations, `r×3J`.
    pub axis_angles: Var<'t>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPose {
    pub raw: Vec<Matrix3<f64>>,
    pub rotations: Vec<RotationMatrix>,
    pub axis_angles: Vec<AxisAngle>,
}

fn stack_dims(input: usize, hidden: usize, output: usize, layers: usize) -> Vec<(usize, usize)> {
    (0..layers)
        .map(|l| {
            let i = if l == 0 { input } else { hidden };
            let o = if l + 1 == layers { output } else { hidden };
            (i, o)
        })
        .collect()
}

impl PriorModel {
    fn encoder_dims(config: &PriorConfig) -> Vec<(usize, usize)> {
        stack_dims(9 * config.joints, config.hidden, 2 * config.latent_dim, config.layers)
    }

    fn decoder_dims(config: &PriorConfig) -> Vec<(usize, usize)> {
        stack_dims(config.latent_dim, config.hidden, 9 * config.joints, config.layers)
    }

    /// He-initialized hidden layers; small output layers; decoder output bias
    /// at the identity so an untrained model decodes near the rest pose.
    pub fn init(config: &PriorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        for (stack, dims) in [Self::encoder_dims(config), Self::decoder_dims(config)].into_iter().enumerate() {
            let last = dims.len() - 1;
            for (l, (i, o)) in dims.into_iter().enumerate() {
                let std = if l == last { 0.1 / (i as f64).sqrt() } else { (2.0 / i as f64).sqrt() };
                let normal = Normal::new(0.0, std).expect("positive std");
                params.push(Tensor::from_fn(i, o, |_, _| normal.sample(&mut rng)));
                let bias = if stack == 1 && l == last {
                    let eye = flatten(&Matrix3::identity());
                    Tensor::from_fn(1, o, |_, c| eye[c % 9])
                } else {
                    Tensor::zeros(1, o)
                };
                params.push(bias);
            }
        }
        Ok(PriorModel {
            config: config.clone(),
            params,
            meta: TrainingMeta {
                seed: config.seed,
                activation: format!("leaky_relu({})", config.leaky_slope),
                ..Default::default()
            },
        })
    }

    pub fn kind(&self) -> PriorKind {
        self.config.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let dims: Vec<(usize, usize)> = Self::encoder_dims(&self.config)
            .into_iter()
            .chain(Self::decoder_dims(&self.config))
            .flat_map(|(i, o)| [(i, o), (1, o)])
            .collect();
        if dims.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: self.params.len(),
            });
        }
        for (p, d) in self.params.iter().zip(&dims) {
            if p.shape() != *d {
                return Err(Error::ShapeMismatch {
                    op: "prior parameters",
                    lhs: p.shape(),
                    rhs: *d,
                });
            }
            if !p.is_finite() {
                return Err(Error::InvalidInput("prior weights are not finite".into()));
            }
        }
        Ok(())
    }

    /// Places the parameters on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundPrior<'t> {
        let params = self
            .params
            .iter()
            .map(|p| if trainable { tape.var(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        BoundPrior {
            params,
            layers: self.config.layers,
            latent: self.config.latent_dim,
            joints: self.config.joints,
            slope: self.config.leaky_slope,
        }
    }

    /// Posterior mean and log-variance of one pose.
    pub fn encode(&self, rotations: &[RotationMatrix]) -> Result<(Vec<f64>, Vec<f64>)> {
        if rotations.len() != self.config.joints {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: (1, 9 * rotations.len()),
                rhs: (1, 9 * self.config.joints),
            });
        }
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let x = tape.constant(Tensor::row(rotations.iter().flat_map(|r| flatten(&r.0)).collect()));
        let (mu, log_var) = bound.encode(x)?;
        Ok((mu.value().data().to_vec(), log_var.value().data().to_vec()))
    }

    pub fn encode_axis_angles(&self, pose: &[AxisAngle]) -> Result<(Vec<f64>, Vec<f64>)> {
        let rots: Vec<RotationMatrix> = pose.iter().map(AxisAngle::to_matrix).collect();
        self.encode(&rots)
    }

    pub fn decode(&self, z: &[f64]) -> Result<DecodedPose> {
        if z.len() != self.config.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = bound.decode(tape.constant(Tensor::row(z.to_vec())))?;
        let raw = out.raw.value();
        let rot = out.rotations.value();
        let aa = out.axis_angles.value();
        let j = self.config.joints;
        Ok(DecodedPose {
            raw: (0..j).map(|k| unflatten(&raw.data()[9 * k..])).collect(),
            rotations: (0..j).map(|k| RotationMatrix(unflatten(&rot.data()[9 * k..]))).collect(),
            axis_angles: (0..j)
                .map(|k| AxisAngle::new(aa.data()[3 * k], aa.data()[3 * k + 1], aa.data()[3 * k + 2]))
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: MODEL_SCHEMA_VERSION,
                found,
            });
        }
        let file: ModelFile = serde_json::from_value(value)?;
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A prior whose parameters live on a tape.
pub struct BoundPrior<'t> {
    pub params: Vec<Var<'t>>,
    layers: usize,
    latent: usize,
    joints: usize,
    slope: f64,
}

impl<'t> BoundPrior<'t> {
    /// Wraps externally built parameter nodes laid out as in [`PriorModel`].
    pub fn from_params(params: Vec<Var<'t>>, config: &PriorConfig) -> Result<Self> {
        if params.len() != 4 * config.layers {
            return Err(Error::DimensionMismatch {
                expected: 4 * config.layers,
                got: params.len(),
            });
        }
        Ok(BoundPrior {
            params,
            layers: config.layers,
            latent: config.latent_dim,
            joints: config.joints,
            slope: config.leaky_slope,
        })
    }

    fn stack(&self, offset: usize, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for l in 0..self.layers {
            let w = self.params[offset + 2 * l];
            let b = self.params[offset + 2 * l + 1];
            h = h.matmul(w)?.add_row(b)?;
            if l + 1 < self.layers {
                h = h.leaky_relu(self.slope);
            }
        }
        Ok(h)
    }

    /// `r×9J` flattened rotations to `(μ, log σ²)`, each `r×d`.
    pub fn encode(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.stack(0, x)?;
        Ok((h.slice(0, self.latent)?, h.slice(self.latent, self.latent)?))
    }

    pub fn decode(&self, z: Var<'t>) -> Result<Decoded<'t>> {
        let raw = self.stack(2 * self.layers, z)?;
        debug_assert_eq!(raw.shape().1, 9 * self.joints);
        let rotations = raw.project()?;
        let axis_angles = rotations.log_map()?;
        Ok(Decoded { raw, rotations, axis_angles })
    }
}
