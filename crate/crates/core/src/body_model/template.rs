use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEMPLATE_SCHEMA_VERSION: u32 = 1;

/// Tolerance on skin-weight row sums.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
const MAX_INFLUENCES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    /// Rest offset from the parent joint (absolute position for the root).
    pub offset: [f64; 3],
}

/// Named vertex and joint index sets used for evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Region {
    pub vertices: Vec<usize>,
    pub joints: Vec<usize>,
}

/// Articulated body template: skeleton, rest mesh, skinning weights, shape
/// blendshapes and joint regressor.
///
/// Joint layout is fixed: root, `body_joint_count` body joints, then the
/// left-hand and right-hand joints (`hand_joint_count` each).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTemplate {
    pub joints: Vec<JointSpec>,
    pub body_joint_count: usize,
    pub hand_joint_count: usize,
    pub vertices: Vec<Vector3<f64>>,
    /// Sparse rows `(joint, weight)` per vertex.
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    /// One displacement field per shape coefficient, `N` vectors each.
    pub shape_dirs: Vec<Vec<Vector3<f64>>>,
    /// Sparse rows `(vertex, weight)` per joint.
    pub joint_regressor: Vec<Vec<(usize, f64)>>,
    pub regions: BTreeMap<String, Region>,
}

impl SkeletonTemplate {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn shape_count(&self) -> usize {
        self.shape_dirs.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.joints[joint].parent
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn body_range(&self) -> std::ops::Range<usize> {
        1..1 + self.body_joint_count
    }

    pub fn left_hand_range(&self) -> std::ops::Range<usize> {
        let s = 1 + self.body_joint_count;
        s..s + self.hand_joint_count
    }

    pub fn right_hand_range(&self) -> std::ops::Range<usize> {
        let s = 1 + self.body_joint_count + self.hand_joint_count;
        s..s + self.hand_joint_count
    }

    pub fn region(&self, name: &str) -> Result<&Region> {
        self.regions
            .get(name)
            .ok_or_else(|| Error::RegionMismatch(format!("template has no region `{name}`")))
    }

    /// Rest joint positions from the offsets.
    pub fn offset_joints(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let o = Vector3::from(j.offset);
            out.push(match j.parent {
                Some(p) => out[p] + o,
                None => o,
            });
        }
        out
    }

    /// Children of every joint.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.joints.len()];
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                out[p].push(i);
            }
        }
        out
    }

    /// Vertical extent of the rest mesh in meters.
    pub fn height(&self) -> f64 {
        let (lo, hi) = self
            .vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
        hi - lo
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTemplate(msg));
        let k = self.joints.len();
        let n = self.vertices.len();
        if k != 1 + self.body_joint_count + 2 * self.hand_joint_count {
            return bad(format!(
                "{k} joints but layout needs 1 + {} + 2x{}",
                self.body_joint_count, self.hand_joint_count
            ));
        }
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || self.joints[0].parent.is_some() {
            return bad("exactly one root, at index 0, is required".into());
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return bad(format!("joint {i} ({}) has parent {p}; parents must precede children", j.name));
                }
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return bad(format!("joint {i} has a non-finite offset"));
            }
        }
        if self.skin_weights.len() != n {
            return bad(format!("{} skin-weight rows for {n} vertices", self.skin_weights.len()));
        }
        for (v, row) in self.skin_weights.iter().enumerate() {
            if row.is_empty() || row.len() > MAX_INFLUENCES {
                return bad(format!("vertex {v} has {} influences", row.len()));
            }
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return bad(format!("vertex {v} weights sum to {sum}"));
            }
            if row.iter().any(|&(j, w)| j >= k || w < 0.0 || !w.is_finite()) {
                return bad(format!("vertex {v} has an invalid weight entry"));
            }
        }
        for (s, dir) in self.shape_dirs.iter().enumerate() {
            if dir.len() != n {
                return bad(format!("shape direction {s} has {} vectors for {n} vertices", dir.len()));
            }
        }
        if self.joint_regressor.len() != k {
            return bad(format!("{} regressor rows for {k} joints", self.joint_regressor.len()));
        }
        if self.joint_regressor.iter().flatten().any(|&(v, w)| v >= n || !w.is_finite()) {
            return bad("regressor references an invalid vertex".into());
        }
        for (name, r) in &self.regions {
            if r.vertices.is_empty() && r.joints.is_empty() {
                return bad(format!("region `{name}` is empty"));
            }
            if r.vertices.iter().any(|&v| v >= n) || r.joints.iter().any(|&j| j >= k) {
                return bad(format!("region `{name}` indexes outside the template"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TemplateFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TemplateFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form. Weights and regressor are sparse triplets.
#[derive(Serialize, Deserialize)]
struct TemplateFile {
    schema_version: u32,
    joints: Vec<JointSpec>,
    body_joint_count: usize,
    hand_joint_count: usize,
    vertices: Vec<[f64; 3]>,
    /// `(vertex, joint, weight)`
    skin_weights: Vec<(usize, usize, f64)>,
    /// Flattened `N×3` per coefficient.
    shape_dirs: Vec<Vec<f64>>,
    /// `(joint, vertex, weight)`
    joint_regressor: Vec<(usize, usize, f64)>,
    regions: BTreeMap<String, Region>,
}

impl From<&SkeletonTemplate> for TemplateFile {
    fn from(t: &SkeletonTemplate) -> Self {
        TemplateFile {
            schema_version: TEMPLATE_SCHEMA_VERSION,
            joints: t.joints.clone(),
            body_joint_count: t.body_joint_count,
            hand_joint_count: t.hand_joint_count,
            vertices: t.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            skin_weights: t
                .skin_weights
                .iter()
                .enumerate()
                .flat_map(|(v, row)| row.iter().map(move |&(j, w)| (v, j, w)))
                .collect(),
            shape_dirs: t.shape_dirs.iter().map(|d| d.iter().flat_map(|v| [v.x, v.y, v.z]).collect()).collect(),
            joint_regressor: t
                .joint_regressor
                .iter()
                .enumerate()
                .flat_map(|(j, row)| row.iter().map(move |&(v, w)| (j, v, w)))
                .collect(),
            regions: t.regions.clone(),
        }
    }
}

impl TryFrom<TemplateFile> for SkeletonTemplate {
    type Error = Error;

    fn try_from(f: TemplateFile) -> Result<Self> {
        if f.schema_version != TEMPLATE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: TEMPLATE_SCHEMA_VERSION,
                found: f.schema_version,
            });
        }
        let n = f.vertices.len();
        let k = f.joints.len();
        let mut skin_weights = vec![Vec::new(); n];
        for (v, j, w) in f.skin_weights {
            skin_weights
                .get_mut(v)
                .ok_or_else(|| Error::InvalidTemplate(format!("weight for vertex {v} out of range")))?
                .push((j, w));
        }
        let mut joint_regressor = vec![Vec::new(); k];
        for (j, v, w) in f.joint_regressor {
            joint_regressor
                .get_mut(j)
                .ok_or_else(|| Error::InvalidTemplate(format!("regressor row {j} out of range")))?
                .push((v, w));
        }
        let shape_dirs = f
            .shape_dirs
            .into_iter()
            .map(|d| {
                if d.len() != 3 * n {
                    return Err(Error::InvalidTemplate("shape direction length".into()));
                }
                Ok(d.chunks(3).map(Vector3::from_column_slice).collect())
            })
            .collect::<Result<_>>()?;
        let tpl = SkeletonTemplate {
            joints: f.joints,
            body_joint_count: f.body_joint_count,
            hand_joint_count: f.hand_joint_count,
            vertices: f.vertices.into_iter().map(Vector3::from).collect(),
            skin_weights,
            shape_dirs,
            joint_regressor,
            regions: f.regions,
        };
        tpl.validate()?;
        Ok(tpl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::procedural::{generate, ProceduralConfig};

    fn tpl() -> SkeletonTemplate {
        generate(&ProceduralConfig::default()).unwrap()
    }

    #[test]
    fn json_round_trip() {
        let t = tpl();
        let back = SkeletonTemplate::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.joints, t.joints);
        assert_eq!(back.regions, t.regions);
        for (a, b) in back.vertices.iter().zip(&t.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
        for (ra, rb) in back.skin_weights.iter().zip(&t.skin_weights) {
            for (a, b) in ra.iter().zip(rb) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
        for (da, db) in back.shape_dirs.iter().zip(&t.shape_dirs) {
            for (a, b) in da.iter().zip(db) {
                assert!((a - b).norm() < 1e-9);
            }
        }
        assert_eq!(back.joint_regressor.len(), t.joint_regressor.len());
    }

    #[test]
    fn schema_version_checked() {
        let text = tpl().to_json().unwrap().replacen("\"schema_version\":1", "\"schema_version\":7", 1);
        assert!(matches!(
            SkeletonTemplate::from_json(&text),
            Err(Error::SchemaVersion { expected: 1, found: 7 })
        ));
    }

    #[test]
    fn weight_rows_must_sum_to_one() {
        let mut t = tpl();
        t.skin_weights[3][0].1 += 1e-6;
        assert!(matches!(t.validate(), Err(Error::InvalidTemplate(_))));
    }

    #[test]
    fn too_many_influences_rejected() {
        let mut t = tpl();
        t.skin_weights[0] = (0..5).map(|j| (j, 0.2)).collect();
        assert!(t.validate().is_err());
    }

    #[test]
    fn parents_must_precede_children() {
        let mut t = tpl();
        t.joints[3].parent = Some(10);
        assert!(t.validate().is_err());
        let mut t = tpl();
        t.joints[5].parent = None;
        assert!(t.validate().is_err());
    }

    #[test]
    fn index_ranges_follow_layout() {
        let t = tpl();
        assert_eq!(t.body_range(), 1..22);
        assert_eq!(t.left_hand_range(), 22..37);
        assert_eq!(t.right_hand_range(), 37..52);
    }
}
