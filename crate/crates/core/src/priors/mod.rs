//! Variational pose priors for the body and the hands.
//!
//! Both priors share one architecture: an MLP encoder from flattened joint
//! rotation matrices to a Gaussian posterior `(μ, log σ²)` and an MLP decoder
//! from a latent code back to raw `3×3` blocks, which are projected onto the
//! rotation group before use.

mod loss;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{kl_loss, kl_var, reparameterize, reparameterize_var, LossContext, LossTerms, PoseBatch};
pub(crate) use model::{flatten, unflatten};
pub use model::{mirror_hand, mirror_rotation_signs, BoundPrior, Decoded, DecodedPose, PriorModel, MODEL_SCHEMA_VERSION};
pub use train::{recon_mpjpe, train, train_with, Adam, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Body,
    Hand,
}

impl PriorKind {
    /// Modeled joints: body joints without the root, or one hand.
    pub fn joints(self) -> usize {
        match self {
            PriorKind::Body => 21,
            PriorKind::Hand => 15,
        }
    }

    pub fn default_latent(self) -> usize {
        match self {
            PriorKind::Body => 33,
            PriorKind::Hand => 23,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Body => "body",
            PriorKind::Hand => "hand",
        }
    }

    pub fn expect(self, other: PriorKind) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: self.name().into(),
                got: other.name().into(),
            })
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "body" => Ok(PriorKind::Body),
            "hand" => Ok(PriorKind::Hand),
            _ => Err(Error::InvalidInput(format!("unknown prior kind `{s}`"))),
        }
    }
}

/// Weights `c₁…c₆` of the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kl: f64,
    pub recon: f64,
    pub mesh: f64,
    pub orth: f64,
    pub reg: f64,
    pub biomech: f64,
}

impl LossWeights {
    pub fn for_kind(kind: PriorKind) -> Self {
        let kl = match kind {
            PriorKind::Body => 0.001,
            PriorKind::Hand => 0.0001,
        };
        LossWeights {
            kl,
            recon: 0.999,
            mesh: 0.999,
            orth: 0.01,
            reg: 0.0001,
            biomech: 1.5,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.kl, self.recon, self.mesh, self.orth, self.reg, self.biomech]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub joints: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    /// Weight layers per stack.
    pub layers: usize,
    pub leaky_slope: f64,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Validation interval in steps when a validation set is given.
    pub eval_every: usize,
    pub seed: u64,
}

impl PriorConfig {
    pub fn new(kind: PriorKind) -> Self {
        PriorConfig {
            kind,
            joints: kind.joints(),
            latent_dim: kind.default_latent(),
            hidden: 512,
            layers: 3,
            leaky_slope: 0.01,
            weights: LossWeights::for_kind(kind),
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 2000,
            eval_every: 100,
            seed: 0,
        }
    }

    /// Hand prior trained on unrectified data.
    pub fn unfiltered_hand() -> Self {
        PriorConfig {
            latent_dim: 24,
            ..PriorConfig::new(PriorKind::Hand)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.joints != self.kind.joints() {
            return bad(format!("{} prior models {} joints, got {}", self.kind, self.kind.joints(), self.joints));
        }
        if self.latent_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("latent dimension, hidden width and layer count must be positive".into());
        }
        if self.weights.as_array().iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad(format!("loss weights must be finite and non-negative: {:?}", self.weights));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.eval_every == 0 {
            return bad("learning rate, batch size and eval interval must be positive".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_per_kind() {
        assert_eq!(
            PriorConfig::new(PriorKind::Body).weights.as_array(),
            [0.001, 0.999, 0.999, 0.01, 0.0001, 1.5]
        );
        assert_eq!(
            PriorConfig::new(PriorKind::Hand).weights.as_array(),
            [0.0001, 0.999, 0.999, 0.01, 0.0001, 1.5]
        );
        assert_eq!(PriorConfig::new(PriorKind::Body).latent_dim, 33);
        assert_eq!(PriorConfig::new(PriorKind::Hand).latent_dim, 23);
        assert_eq!(PriorConfig::unfiltered_hand().latent_dim, 24);
    }

    #[test]
    fn config_validation() {
        let mut c = PriorConfig::new(PriorKind::Body);
        c.validate().unwrap();
        c.latent_dim = 0;
        assert!(c.validate().is_err());
        let mut c = PriorConfig::new(PriorKind::Hand);
        c.weights.orth = -1.0;
        assert!(c.validate().is_err());
        let mut c = PriorConfig::new(PriorKind::Hand);
        c.joints = 21;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Body".parse::<PriorKind>().unwrap(), PriorKind::Body);
        assert!("face".parse::<PriorKind>().is_err());
        assert!(matches!(PriorKind::Body.expect(PriorKind::Hand), Err(Error::KindMismatch { .. })));
    }
}
