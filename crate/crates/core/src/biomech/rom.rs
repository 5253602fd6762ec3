use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::body_model::SkeletonTemplate;
use crate::error::{Error, Result};
use crate::rotations::{euler_to_matrix, euler_unchecked, AxisAngle, EulerConvention, EulerTriple};

pub const ROM_SCHEMA_VERSION: u32 = 1;

const DEFAULT_ROM: &str = include_str!("../../data/rom.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Central,
}

impl Side {
    pub fn prefix(self) -> &'static str {
        match self {
            Side::Left => "left_",
            Side::Right => "right_",
            Side::Central => "",
        }
    }
}

/// Signed bounds for one joint, in radians, per Euler axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomEntry {
    pub joint: String,
    pub convention: EulerConvention,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub side: Side,
    /// Bounds were produced by mirroring the opposite side.
    pub mirrored: bool,
}

impl RomEntry {
    pub fn contains(&self, angles: &[f64; 3]) -> bool {
        (0..3).all(|i| angles[i] >= self.min[i] && angles[i] <= self.max[i])
    }

    pub fn clamp(&self, angles: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| angles[i].clamp(self.min[i], self.max[i]))
    }
}

/// Converts unsigned clinical magnitudes `[negative, positive]` (degrees) per
/// axis to signed radian bounds. Left-side bounds are mirrored through the
/// sagittal plane: axes that flip sign under the reflection swap and negate.
pub fn normalize_rom(clinical: &[[f64; 2]; 3], side: Side, convention: &str) -> Result<([f64; 3], [f64; 3])> {
    let convention: EulerConvention = convention.parse()?;
    if let Some(bad) = clinical.iter().flatten().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidInput(format!("clinical magnitudes must be non-negative, got {bad}")));
    }
    let min = clinical.map(|[neg, _]| -neg.to_radians());
    let max = clinical.map(|[_, pos]| pos.to_radians());
    Ok(match side {
        Side::Left => mirror_bounds(&min, &max, convention),
        _ => (min, max),
    })
}

/// Bounds of the mirror-image joint.
pub fn mirror_bounds(min: &[f64; 3], max: &[f64; 3], convention: EulerConvention) -> ([f64; 3], [f64; 3]) {
    let axes = convention.axes();
    let mut lo = *min;
    let mut hi = *max;
    for i in 0..3 {
        if axes[i].mirror_sensitive() {
            lo[i] = -max[i];
            hi[i] = -min[i];
        }
    }
    (lo, hi)
}

/// Mirrored Euler angles; exact counterpart of [`AxisAngle::mirrored`].
pub fn mirror_angles(angles: &[f64; 3], convention: EulerConvention) -> [f64; 3] {
    let axes = convention.axes();
    std::array::from_fn(|i| if axes[i].mirror_sensitive() { -angles[i] } else { angles[i] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RomFileEntry {
    joint: String,
    convention: String,
    #[serde(default)]
    motions: Vec<[String; 2]>,
    limits: [[f64; 2]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RomFile {
    schema_version: u32,
    #[serde(default)]
    source: String,
    body: Vec<RomFileEntry>,
    hand: Vec<RomFileEntry>,
}

/// Range-of-motion table: the six constrained body joints and the fifteen
/// joints of each hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomTable {
    pub body: Vec<RomEntry>,
    pub left_hand: Vec<RomEntry>,
    pub right_hand: Vec<RomEntry>,
}

impl RomTable {
    /// Shipped table (right-side degrees, mirrored to the left).
    pub fn default_table() -> Self {
        Self::from_json(DEFAULT_ROM).expect("bundled ROM table is valid")
    }

    /// Parses the authored-degrees format and normalizes it.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: RomFile = serde_json::from_str(text)?;
        if file.schema_version != ROM_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: ROM_SCHEMA_VERSION,
                found: file.schema_version,
            });
        }
        let expand = |entries: &[RomFileEntry], side: Side| -> Result<Vec<RomEntry>> {
            entries
                .iter()
                .map(|e| {
                    let (min, max) = normalize_rom(&e.limits, side, &e.convention)?;
                    Ok(RomEntry {
                        joint: format!("{}{}", side.prefix(), e.joint),
                        convention: e.convention.parse()?,
                        min,
                        max,
                        side,
                        mirrored: side == Side::Left,
                    })
                })
                .collect()
        };
        let right_body = expand(&file.body, Side::Right)?;
        let left_body = expand(&file.body, Side::Left)?;
        let body = right_body.into_iter().zip(left_body).flat_map(|(r, l)| [r, l]).collect();
        let table = RomTable {
            body,
            left_hand: expand(&file.hand, Side::Left)?,
            right_hand: expand(&file.hand, Side::Right)?,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for e in self.body.iter().chain(&self.left_hand).chain(&self.right_hand) {
            if (0..3).any(|i| !(e.min[i] <= e.max[i])) {
                return Err(Error::InvalidInput(format!("ROM entry {} has min > max", e.joint)));
            }
        }
        Ok(())
    }

    pub fn entry(&self, joint: &str) -> Option<&RomEntry> {
        self.body.iter().chain(&self.left_hand).chain(&self.right_hand).find(|e| e.joint == joint)
    }

    pub fn hand(&self, side: Side) -> &[RomEntry] {
        match side {
            Side::Left => &self.left_hand,
            _ => &self.right_hand,
        }
    }

    /// Template joint index of every entry in `entries`.
    pub fn indices(entries: &[RomEntry], tpl: &SkeletonTemplate) -> Result<Vec<usize>> {
        entries
            .iter()
            .map(|e| {
                tpl.joint_index(&e.joint)
                    .ok_or_else(|| Error::InvalidInput(format!("template has no joint `{}`", e.joint)))
            })
            .collect()
    }
}

/// `Σ_j ‖max(θ_j − max_j, min_j − θ_j, 0)‖²`.
pub fn biomech_penalty(angles: &[EulerTriple], entries: &[RomEntry]) -> Result<f64> {
    if angles.len() != entries.len() {
        return Err(Error::DimensionMismatch {
            expected: entries.len(),
            got: angles.len(),
        });
    }
    let mut total = 0.0;
    for (a, e) in angles.iter().zip(entries) {
        if a.convention != e.convention {
            return Err(Error::ConventionMismatch {
                joint: e.joint.clone(),
                expected: e.convention.name().to_string(),
                got: a.convention.name().to_string(),
            });
        }
        for i in 0..3 {
            let excess = (a.angles[i] - e.max[i]).max(e.min[i] - a.angles[i]).max(0.0);
            total += excess * excess;
        }
    }
    Ok(total)
}

/// Euler decomposition of each rotation in its entry's convention.
pub fn decompose(rotations: &[AxisAngle], entries: &[RomEntry]) -> Vec<EulerTriple> {
    rotations
        .iter()
        .zip(entries)
        .map(|(aa, e)| euler_unchecked(&aa.to_matrix().0, e.convention))
        .collect()
}

/// Penalty of axis-angle rotations against their entries.
pub fn rotation_penalty(rotations: &[AxisAngle], entries: &[RomEntry]) -> Result<f64> {
    biomech_penalty(&decompose(rotations, entries), entries)
}

/// Differentiable penalty of an `r×3J` Euler-angle tensor; sums all rows.
pub fn penalty_var<'t>(angles: Var<'t>, entries: &[RomEntry]) -> Result<Var<'t>> {
    let tape = angles.tape();
    let (rows, cols) = angles.shape();
    if cols != 3 * entries.len() {
        return Err(Error::DimensionMismatch {
            expected: 3 * entries.len(),
            got: cols,
        });
    }
    let bound = |f: &dyn Fn(&RomEntry) -> [f64; 3]| {
        let flat: Vec<f64> = entries.iter().flat_map(f).collect();
        tape.constant(Tensor::from_fn(rows, cols, |_, c| flat[c]))
    };
    let max = bound(&|e| e.max);
    let min = bound(&|e| e.min);
    let over = angles.sub(max)?.relu();
    let under = min.sub(angles)?.relu();
    Ok(over.square().sum().add(under.square().sum())?)
}

/// Clamps each hand joint to its bounds in Euler coordinates and recomposes.
/// Joints already inside their bounds are returned unchanged, which makes the
/// rectifier exactly idempotent.
pub fn rectify_hand_frame(hand_pose: &[AxisAngle], entries: &[RomEntry]) -> Result<Vec<AxisAngle>> {
    if hand_pose.len() != entries.len() {
        return Err(Error::DimensionMismatch {
            expected: entries.len(),
            got: hand_pose.len(),
        });
    }
    Ok(hand_pose.iter().zip(entries).map(|(aa, e)| rectify_joint(aa, e)).collect())
}

fn angles_of(aa: &AxisAngle, convention: EulerConvention) -> [f64; 3] {
    euler_unchecked(&aa.to_matrix().0, convention).angles
}

fn rectify_joint(aa: &AxisAngle, entry: &RomEntry) -> AxisAngle {
    let angles = angles_of(aa, entry.convention);
    if entry.contains(&angles) {
        return *aa;
    }
    let mut target = entry.clamp(&angles);
    let mut out = *aa;
    // Recomposition can land a few ulps outside a bound; pull the target
    // inward until the decomposed result is inside.
    for _ in 0..16 {
        out = crate::rotations::log_unchecked(&euler_to_matrix(target, entry.convention).0);
        let check = angles_of(&out, entry.convention);
        if entry.contains(&check) {
            return out;
        }
        for i in 0..3 {
            let span = (entry.max[i] - entry.min[i]).max(0.0);
            let nudge = 4.0 * f64::EPSILON * target[i].abs().max(1.0);
            if check[i] > entry.max[i] {
                target[i] -= (check[i] - entry.max[i] + nudge).min(span / 2.0);
            } else if check[i] < entry.min[i] {
                target[i] += (entry.min[i] - check[i] + nudge).min(span / 2.0);
            }
        }
    }
    out
}
