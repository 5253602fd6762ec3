use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{pose_shaped, shaped_template, skin, PoseParams, Region, SkeletonTemplate};
use crate::error::{Error, Result};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

fn check(pred: &[Vector3<f64>], gt: &[Vector3<f64>], indices: &[usize], what: &str) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::RegionMismatch(format!(
            "{} predicted vs {} reference {what}",
            pred.len(),
            gt.len()
        )));
    }
    if indices.is_empty() {
        return Err(Error::RegionMismatch(format!("region has no {what}")));
    }
    if let Some(i) = indices.iter().find(|&&i| i >= pred.len()) {
        return Err(Error::RegionMismatch(format!("{what} index {i} out of range for {} points", pred.len())));
    }
    Ok(())
}

fn mean_distance(pred: &[Vector3<f64>], gt: &[Vector3<f64>], indices: &[usize], shift: Vector3<f64>) -> f64 {
    let total: f64 = indices.iter().map(|&i| (pred[i] - gt[i] - shift).norm()).sum();
    1000.0 * total / indices.len() as f64
}

/// Mean joint position error over the region's joints, millimeters.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], region: &Region) -> Result<f64> {
    check(pred, gt, &region.joints, "joints")?;
    Ok(mean_distance(pred, gt, &region.joints, Vector3::zeros()))
}

/// Mean vertex position error over the region's vertices, millimeters.
pub fn mpvpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], region: &Region) -> Result<f64> {
    check(pred, gt, &region.vertices, "vertices")?;
    Ok(mean_distance(pred, gt, &region.vertices, Vector3::zeros()))
}

fn centroid(points: &[Vector3<f64>], indices: &[usize]) -> Vector3<f64> {
    indices.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / indices.len() as f64
}

/// Mean vertex-to-vertex error after removing each cloud's region centroid,
/// millimeters. Rotation is not removed.
pub fn tr_v2v(pred: &[Vector3<f64>], gt: &[Vector3<f64>], region: &Region) -> Result<f64> {
    check(pred, gt, &region.vertices, "vertices")?;
    let shift = centroid(pred, &region.vertices) - centroid(gt, &region.vertices);
    Ok(mean_distance(pred, gt, &region.vertices, shift))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub mpjpe: f64,
    pub mpvpe: f64,
    pub tr_v2v: f64,
}

/// Metrics averaged over frames, plus the per-frame values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub units: String,
    pub translation_removal: String,
    pub frames: usize,
    pub regions: BTreeMap<String, RegionMetrics>,
    pub per_frame: Vec<BTreeMap<String, RegionMetrics>>,
}

fn posed_points(tpl: &SkeletonTemplate, pose: &PoseParams) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let shaped = shaped_template(tpl, &pose.shape)?;
    if pose.joint_count() != tpl.joint_count() {
        return Err(Error::DimensionMismatch {
            expected: tpl.joint_count(),
            got: pose.joint_count(),
        });
    }
    let posed = pose_shaped(tpl, &shaped, pose);
    let vertices = skin(tpl, &shaped, &posed);
    Ok((posed.joints, vertices))
}

/// Evaluates predicted against reference pose sequences on named template
/// regions. Frames are evaluated in parallel.
pub fn evaluate_poses(tpl: &SkeletonTemplate, pred: &[PoseParams], gt: &[PoseParams], regions: &[String]) -> Result<EvalReport> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let specs: Vec<(&String, &Region)> = regions.iter().map(|r| Ok((r, tpl.region(r)?))).collect::<Result<_>>()?;
    let per_frame: Vec<BTreeMap<String, RegionMetrics>> = pred
        .par_iter()
        .zip(gt.par_iter())
        .map(|(p, g)| {
            let (pj, pv) = posed_points(tpl, p)?;
            let (gj, gv) = posed_points(tpl, g)?;
            specs
                .iter()
                .map(|(name, region)| {
                    Ok((
                        (*name).clone(),
                        RegionMetrics {
                            mpjpe: mpjpe(&pj, &gj, region)?,
                            mpvpe: mpvpe(&pv, &gv, region)?,
                            tr_v2v: tr_v2v(&pv, &gv, region)?,
                        },
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = per_frame.len() as f64;
    let mut mean = BTreeMap::new();
    for (name, _) in &specs {
        let mut m = RegionMetrics::default();
        for frame in &per_frame {
            let f = frame[*name];
            m.mpjpe += f.mpjpe / n;
            m.mpvpe += f.mpvpe / n;
            m.tr_v2v += f.tr_v2v / n;
        }
        mean.insert((*name).clone(), m);
    }
    Ok(EvalReport {
        schema_version: METRICS_SCHEMA_VERSION,
        units: "mm".into(),
        translation_removal: "per-region centroid".into(),
        frames: per_frame.len(),
        regions: mean,
        per_frame,
    })
}
