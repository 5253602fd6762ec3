//! Deterministic procedural humanoid with an SMPL-X-like joint layout.
//!
//! Coordinates: y up, z forward, +x toward the body's left. Rest pose is a
//! T-pose with palms facing down. The right side is the exact mirror image
//! of the left side through the x = 0 plane.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::template::{JointSpec, Region, SkeletonTemplate};
use crate::error::{Error, Result};

pub const BODY_JOINT_COUNT: usize = 21;
pub const HAND_JOINT_COUNT: usize = 15;
pub const JOINT_COUNT: usize = 1 + BODY_JOINT_COUNT + 2 * HAND_JOINT_COUNT;
const RING: usize = 6;

pub const REGION_NAMES: [&str; 6] = ["fbody", "ubody", "ubody-h", "ubody-f", "lhand", "rhand"];

/// Lower-body joint names (excluded from fitting).
pub const LOWER_BODY_JOINTS: [&str; 8] = [
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "left_foot",
    "right_foot",
];

pub const FINGERS: [&str; 5] = ["index", "middle", "pinky", "ring", "thumb"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProceduralConfig {
    pub vertex_count: usize,
    pub shape_count: usize,
    pub seed: u64,
}

impl Default for ProceduralConfig {
    fn default() -> Self {
        ProceduralConfig {
            vertex_count: 600,
            shape_count: 10,
            seed: 0,
        }
    }
}

struct Seed {
    name: &'static str,
    parent: Option<&'static str>,
    pos: [f64; 3],
    radius: f64,
}

const fn seed(name: &'static str, parent: Option<&'static str>, pos: [f64; 3], radius: f64) -> Seed {
    Seed { name, parent, pos, radius }
}

/// Central and left-side body joints; right-side joints are mirrored.
const BODY: [Seed; 14] = [
    seed("pelvis", None, [0.0, 0.95, 0.0], 0.12),
    seed("left_hip", Some("pelvis"), [0.09, 0.87, 0.0], 0.08),
    seed("spine1", Some("pelvis"), [0.0, 1.05, -0.01], 0.115),
    seed("left_knee", Some("left_hip"), [0.10, 0.50, 0.01], 0.055),
    seed("spine2", Some("spine1"), [0.0, 1.17, -0.01], 0.115),
    seed("left_ankle", Some("left_knee"), [0.10, 0.09, -0.02], 0.04),
    seed("spine3", Some("spine2"), [0.0, 1.30, 0.0], 0.12),
    seed("left_foot", Some("left_ankle"), [0.11, 0.03, 0.10], 0.03),
    seed("neck", Some("spine3"), [0.0, 1.50, -0.01], 0.05),
    seed("left_collar", Some("spine3"), [0.07, 1.42, 0.0], 0.05),
    seed("head", Some("neck"), [0.0, 1.60, 0.02], 0.09),
    seed("left_shoulder", Some("left_collar"), [0.18, 1.43, -0.01], 0.055),
    seed("left_elbow", Some("left_shoulder"), [0.45, 1.43, -0.02], 0.04),
    seed("left_wrist", Some("left_elbow"), [0.70, 1.43, -0.01], 0.03),
];

/// SMPL-X body order after the root.
const BODY_ORDER: [&str; 21] = [
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// Left-hand finger chains relative to the wrist, then per-segment offsets.
const FINGER_GEOMETRY: [([f64; 3], [f64; 3], [f64; 3]); 5] = [
    ([0.095, 0.0, 0.025], [0.038, 0.0, 0.0], [0.025, 0.0, 0.0]),
    ([0.098, 0.0, 0.005], [0.040, 0.0, 0.0], [0.027, 0.0, 0.0]),
    ([0.085, -0.003, -0.035], [0.028, 0.0, 0.0], [0.020, 0.0, 0.0]),
    ([0.093, -0.002, -0.015], [0.035, 0.0, 0.0], [0.025, 0.0, 0.0]),
    ([0.025, -0.012, 0.030], [0.030, -0.005, 0.022], [0.025, -0.003, 0.015]),
];

fn mirror(v: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, v.y, v.z)
}

fn mirror_name(name: &str) -> Option<String> {
    if let Some(rest) = name.strip_prefix("left_") {
        Some(format!("right_{rest}"))
    } else {
        name.strip_prefix("right_").map(|rest| format!("left_{rest}"))
    }
}

/// Joint names in template order.
pub fn joint_names() -> Vec<String> {
    let mut names = vec!["pelvis".to_string()];
    names.extend(BODY_ORDER.iter().map(|s| s.to_string()));
    for side in ["left", "right"] {
        for f in FINGERS {
            for i in 1..=3 {
                names.push(format!("{side}_{f}{i}"));
            }
        }
    }
    names
}

struct Layout {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    positions: Vec<Vector3<f64>>,
    radii: Vec<f64>,
}

fn layout() -> Layout {
    let names = joint_names();
    let index = |n: &str| names.iter().position(|x| x == n).expect("known joint");
    let mut parents = vec![None; names.len()];
    let mut positions = vec![Vector3::zeros(); names.len()];
    let mut radii = vec![0.0; names.len()];
    for s in &BODY {
        let i = index(s.name);
        parents[i] = s.parent.map(index);
        positions[i] = Vector3::from(s.pos);
        radii[i] = s.radius;
        if let Some(m) = mirror_name(s.name) {
            let j = index(&m);
            parents[j] = s.parent.map(|p| index(&mirror_name(p).unwrap_or_else(|| p.to_string())));
            positions[j] = mirror(positions[i]);
            radii[j] = s.radius;
        }
    }
    let wrist = positions[index("left_wrist")];
    for (f, (base, second, third)) in FINGERS.iter().zip(FINGER_GEOMETRY) {
        let mut at = wrist;
        let mut parent = "left_wrist".to_string();
        for (seg, off) in [base, second, third].into_iter().enumerate() {
            let name = format!("left_{f}{}", seg + 1);
            at += Vector3::from(off);
            let i = index(&name);
            let j = index(&mirror_name(&name).expect("sided"));
            parents[i] = Some(index(&parent));
            parents[j] = Some(index(&mirror_name(&parent).expect("sided")));
            positions[i] = at;
            positions[j] = mirror(at);
            let r = if *f == "thumb" && seg == 0 { 0.012 } else { 0.009 };
            radii[i] = r;
            radii[j] = r;
            parent = name;
        }
    }
    Layout {
        names,
        parents,
        positions,
        radii,
    }
}

fn orthonormal_pair(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let d = d.normalize();
    let helper = if d.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let u = d.cross(&helper).normalize();
    let w = d.cross(&u);
    (u, w)
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Builds the procedural template.
pub fn generate(config: &ProceduralConfig) -> Result<SkeletonTemplate> {
    let Layout {
        names,
        parents,
        positions,
        radii,
    } = layout();
    let k = names.len();
    if config.vertex_count < RING * k {
        return Err(Error::InvalidTemplate(format!(
            "at least {} vertices are needed for {k} joints",
            RING * k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mirror_of: Vec<Option<usize>> = names
        .iter()
        .map(|n| mirror_name(n).and_then(|m| names.iter().position(|x| *x == m)))
        .collect();
    let is_right = |j: usize| names[j].starts_with("right_");
    let mut children = vec![Vec::new(); k];
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }
    let tip = |j: usize| -> Vector3<f64> {
        match names[j].as_str() {
            "head" => Vector3::new(0.0, 1.74, 0.0),
            "left_foot" => Vector3::new(0.11, 0.02, 0.18),
            "right_foot" => Vector3::new(-0.11, 0.02, 0.18),
            _ => {
                let p = parents[j].expect("leaf has a parent");
                positions[j] + (positions[j] - positions[p]) * 0.8
            }
        }
    };
    // Segments a joint's vertices are attached to.
    let segments: Vec<Vec<(Vector3<f64>, Vector3<f64>)>> = (0..k)
        .map(|j| {
            if children[j].is_empty() {
                vec![(positions[j], tip(j))]
            } else {
                children[j].iter().map(|&c| (positions[j], positions[c])).collect()
            }
        })
        .collect();

    // Rings around every joint, perpendicular to the incoming bone.
    let mut vertices: Vec<Vector3<f64>> = vec![Vector3::zeros(); RING * k];
    for j in (0..k).filter(|&j| !is_right(j)) {
        let dir = match parents[j] {
            Some(p) => positions[j] - positions[p],
            None => Vector3::y(),
        };
        let (u, w) = orthonormal_pair(&dir);
        for i in 0..RING {
            let a = TAU * i as f64 / RING as f64;
            let v = positions[j] + (u * a.cos() + w * a.sin()) * radii[j];
            vertices[RING * j + i] = v;
            if let Some(m) = mirror_of[j] {
                vertices[RING * m + i] = mirror(v);
            }
        }
    }

    // Remaining vertices along bones (one bone per non-root joint plus leaf
    // tips), allocated by lateral area with largest-remainder rounding.
    struct Bone {
        joint: usize,
        a: Vector3<f64>,
        b: Vector3<f64>,
        ra: f64,
        rb: f64,
    }
    let mut bones = Vec::new();
    for j in (0..k).filter(|&j| !is_right(j)) {
        if let Some(p) = parents[j] {
            bones.push(Bone {
                joint: j,
                a: positions[p],
                b: positions[j],
                ra: radii[p].min(radii[j] * 2.0),
                rb: radii[j],
            });
        }
        if children[j].is_empty() {
            bones.push(Bone {
                joint: j,
                a: positions[j],
                b: tip(j),
                ra: radii[j],
                rb: radii[j] * 0.7,
            });
        }
    }
    // Every bone emits mirrored vertex pairs, so the mesh is symmetric; an odd
    // leftover vertex sits on the head top, which lies on the mirror plane.
    let cost = |b: &Bone| (b.b - b.a).norm() * (b.ra + b.rb) * if mirror_of[b.joint].is_some() { 2.0 } else { 1.0 };
    let remaining = config.vertex_count - RING * k;
    let pairs = remaining / 2;
    let total: f64 = bones.iter().map(cost).sum();
    let shares: Vec<f64> = bones.iter().map(|b| cost(b) / total * pairs as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..bones.len()).collect();
    order.sort_by(|&x, &y| {
        let fx = shares[x] - counts[x] as f64;
        let fy = shares[y] - counts[y] as f64;
        fy.total_cmp(&fx)
    });
    let short = pairs - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    for (bone, &n) in bones.iter().zip(&counts) {
        let (u, w) = orthonormal_pair(&(bone.b - bone.a));
        for _ in 0..n {
            let t: f64 = rng.random_range(0.1..0.9);
            let a: f64 = rng.random_range(0.0..TAU);
            let r = bone.ra + (bone.rb - bone.ra) * t;
            let v = bone.a + (bone.b - bone.a) * t + (u * a.cos() + w * a.sin()) * r;
            vertices.push(v);
            vertices.push(mirror(v));
        }
    }
    if remaining % 2 == 1 {
        vertices.push(tip(names.iter().position(|n| n == "head").expect("head joint")));
    }
    debug_assert_eq!(vertices.len(), config.vertex_count);

    // Inverse-distance skinning weights, four influences per vertex.
    let skin_weights: Vec<Vec<(usize, f64)>> = vertices
        .iter()
        .map(|v| {
            let mut cand: Vec<(usize, f64)> = (0..k)
                .map(|j| {
                    let d = segments[j].iter().map(|(a, b)| segment_distance(v, a, b)).fold(f64::INFINITY, f64::min);
                    (j, (d + 1e-3).powi(-4))
                })
                .collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cand.truncate(4);
            let sum: f64 = cand.iter().map(|c| c.1).sum();
            cand.iter_mut().for_each(|c| c.1 /= sum);
            cand.retain(|c| c.1 > 1e-12);
            let sum: f64 = cand.iter().map(|c| c.1).sum();
            cand.iter_mut().for_each(|c| c.1 /= sum);
            cand
        })
        .collect();

    let joint_regressor: Vec<Vec<(usize, f64)>> = (0..k).map(|j| (0..RING).map(|i| (RING * j + i, 1.0 / RING as f64)).collect()).collect();

    // Mirror-symmetric shape fields: A commutes with diag(-1, 1, 1), and the
    // spatial modulation depends on height only.
    let center = positions[0];
    let shape_dirs = (0..config.shape_count)
        .map(|s| {
            let (a, freq, phase) = match s {
                0 => (Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.05, 0.0, 0.0, 0.0, 0.0), 0.0, 0.0),
                1 => (Matrix3::new(0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), 0.0, 0.0),
                2 => (Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05), 0.0, 0.0),
                _ => {
                    let mut e = || rng.random_range(-0.04..0.04);
                    let m = Matrix3::new(e(), 0.0, 0.0, 0.0, e(), e(), 0.0, e(), e());
                    (m, rng.random_range(1.0..6.0), rng.random_range(0.0..TAU))
                }
            };
            vertices
                .iter()
                .map(|v| {
                    let amp = if freq == 0.0 { 1.0 } else { 1.0 + 0.5 * (freq * v.y + phase).sin() };
                    a * (v - center) * amp
                })
                .collect()
        })
        .collect();

    let joints: Vec<JointSpec> = (0..k)
        .map(|j| JointSpec {
            name: names[j].clone(),
            parent: parents[j],
            offset: match parents[j] {
                Some(p) => (positions[j] - positions[p]).into(),
                None => positions[j].into(),
            },
        })
        .collect();

    let mut tpl = SkeletonTemplate {
        joints,
        body_joint_count: BODY_JOINT_COUNT,
        hand_joint_count: HAND_JOINT_COUNT,
        vertices,
        skin_weights,
        shape_dirs,
        joint_regressor,
        regions: BTreeMap::new(),
    };
    tpl.regions = default_regions(&tpl);
    tpl.validate()?;
    Ok(tpl)
}

/// Regions from each vertex's dominant joint.
pub fn default_regions(tpl: &SkeletonTemplate) -> BTreeMap<String, Region> {
    let k = tpl.joint_count();
    let idx = |n: &str| tpl.joint_index(n);
    let mut lower = vec![false; k];
    for n in LOWER_BODY_JOINTS.iter().copied().chain(["pelvis"]) {
        if let Some(j) = idx(n) {
            lower[j] = true;
        }
    }
    let head = idx("head");
    let head_z = head.map(|h| tpl.offset_joints()[h].z).unwrap_or(0.0);
    let owner: Vec<usize> = tpl
        .skin_weights
        .iter()
        .map(|row| row.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|e| e.0).unwrap_or(0))
        .collect();
    let hand_joints = |range: std::ops::Range<usize>, wrist: Option<usize>| -> Vec<usize> { wrist.into_iter().chain(range).collect() };
    let lhand = hand_joints(tpl.left_hand_range(), idx("left_wrist"));
    let rhand = hand_joints(tpl.right_hand_range(), idx("right_wrist"));
    let collect = |joints: &[usize], keep_vertex: &dyn Fn(usize) -> bool| Region {
        vertices: (0..tpl.vertex_count())
            .filter(|&v| joints.contains(&owner[v]) && keep_vertex(v))
            .collect(),
        joints: joints.to_vec(),
    };
    let all: Vec<usize> = (0..k).collect();
    let upper: Vec<usize> = (0..k).filter(|&j| !lower[j]).collect();
    let upper_no_head: Vec<usize> = upper.iter().copied().filter(|&j| Some(j) != head).collect();
    let mut regions = BTreeMap::new();
    regions.insert("fbody".to_string(), collect(&all, &|_| true));
    regions.insert("ubody".to_string(), collect(&upper, &|_| true));
    regions.insert("ubody-h".to_string(), collect(&upper_no_head, &|_| true));
    regions.insert(
        "ubody-f".to_string(),
        collect(&upper, &|v| Some(owner[v]) != head || tpl.vertices[v].z <= head_z),
    );
    regions.insert("lhand".to_string(), collect(&lhand, &|_| true));
    regions.insert("rhand".to_string(), collect(&rhand, &|_| true));
    regions
}

/// Name-based left/right joint pairing; central joints map to themselves.
pub fn mirror_joint_map(tpl: &SkeletonTemplate) -> Vec<usize> {
    (0..tpl.joint_count())
        .map(|j| mirror_name(&tpl.joints[j].name).and_then(|m| tpl.joint_index(&m)).unwrap_or(j))
        .collect()
}
