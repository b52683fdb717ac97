//! Point error, pose error and mask IoU against a labeled scene.

use crate::clustering::{Clustering, UNASSIGNED};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, RigidTransform};
use crate::scene::LabeledScene;

fn check_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

/// |p ∩ t| for every predicted cluster `p` (rows) and truth cluster `t`.
fn intersections(pred: &Clustering, truth: &Clustering) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0usize; truth.num_clusters()]; pred.num_clusters()];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if p != UNASSIGNED && t != UNASSIGNED {
            out[p - 1][t - 1] += 1;
        }
    }
    out
}

/// Greedy match of each predicted cluster to the truth cluster with the
/// largest intersection (ties to the lower truth id). Returns per-cluster
/// IoU values.
pub fn mask_iou_per_cluster(pred: &Clustering, truth: &Clustering) -> Result<Vec<f64>> {
    check_len(pred.len(), truth.len())?;
    let inter = intersections(pred, truth);
    let (ps, ts) = (pred.sizes(), truth.sizes());
    Ok(inter
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut best = 0;
            for (j, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = j;
                }
            }
            match row.get(best) {
                Some(&c) if c > 0 => c as f64 / (ps[k] + ts[best] - c) as f64,
                _ => 0.0,
            }
        })
        .collect())
}

/// Mean matched IoU over predicted clusters; 0 for an empty prediction.
pub fn mask_iou(pred: &Clustering, truth: &Clustering) -> Result<f64> {
    let per = mask_iou_per_cluster(pred, truth)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointErrorBreakdown {
    /// Mean over objects of the per-object mean.
    pub object_mean: f64,
    /// Mean over all non-outlier points.
    pub point_mean: f64,
    /// Per-object mean, indexed by object id − 1; NaN for an empty object.
    pub per_object: Vec<f64>,
}

fn check_models(pred: &Clustering, models: &[RigidTransform]) -> Result<()> {
    if models.len() < pred.num_clusters() {
        return Err(Error::InvalidParameter(format!(
            "{} clusters but only {} models",
            pred.num_clusters(),
            models.len()
        )));
    }
    Ok(())
}

/// Displacement error of every object point between its predicted motion
/// and its true motion. Unassigned points are predicted not to move.
pub fn point_error(
    pred: &Clustering,
    models: &[RigidTransform],
    scene: &LabeledScene,
) -> Result<PointErrorBreakdown> {
    check_len(pred.len(), scene.true_labels.len())?;
    check_models(pred, models)?;
    let m = scene.true_transforms.len();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (i, c) in scene.correspondences.iter().enumerate() {
        let j = scene.true_labels[i];
        if j == UNASSIGNED {
            continue;
        }
        let truth = scene.true_transforms[j - 1].apply(&c.a);
        let predicted = match pred.label(i) {
            UNASSIGNED => c.a,
            k => models[k - 1].apply(&c.a),
        };
        sums[j - 1] += (predicted - truth).norm();
        counts[j - 1] += 1;
    }
    let per_object: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
        .collect();
    let scored: Vec<f64> = per_object.iter().copied().filter(|v| !v.is_nan()).collect();
    let total: usize = counts.iter().sum();
    Ok(PointErrorBreakdown {
        object_mean: if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        },
        point_mean: if total == 0 {
            0.0
        } else {
            sums.iter().sum::<f64>() / total as f64
        },
        per_object,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPose {
    pub cluster: usize,
    pub rotation_error: f64,
    pub translation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseErrorBreakdown {
    pub rotation_error: f64,
    pub translation_error: f64,
    /// Scored clusters; those meeting only outliers are left out.
    pub per_cluster: Vec<ClusterPose>,
}

/// Per predicted cluster, the intersection-weighted sum of geodesic and
/// translation errors to every ground-truth object it touches, averaged
/// over clusters. With nothing to score both errors are 0.
pub fn pose_error(
    pred: &Clustering,
    models: &[RigidTransform],
    scene: &LabeledScene,
) -> Result<PoseErrorBreakdown> {
    check_len(pred.len(), scene.true_labels.len())?;
    check_models(pred, models)?;
    let truth = Clustering::from_labels(scene.true_labels.clone());
    let mut ids: Vec<usize> = scene
        .true_labels
        .iter()
        .copied()
        .filter(|&l| l != UNASSIGNED)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let inter = intersections(pred, &truth);
    let sizes = pred.sizes();
    let mut per_cluster = Vec::new();
    for (k, row) in inter.iter().enumerate() {
        if row.iter().all(|&c| c == 0) {
            continue;
        }
        let model = &models[k];
        let (mut rot, mut trans) = (0.0, 0.0);
        for (t, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let gt = &scene.true_transforms[ids[t] - 1];
            let w = c as f64 / sizes[k] as f64;
            rot += w * geodesic_distance(&model.rotation, &gt.rotation)?;
            trans += w * (model.translation - gt.translation).norm();
        }
        per_cluster.push(ClusterPose {
            cluster: k + 1,
            rotation_error: rot,
            translation_error: trans,
        });
    }
    let n = per_cluster.len().max(1) as f64;
    Ok(PoseErrorBreakdown {
        rotation_error: per_cluster.iter().map(|p| p.rotation_error).sum::<f64>() / n,
        translation_error: per_cluster.iter().map(|p| p.translation_error).sum::<f64>() / n,
        per_cluster,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub point_error: f64,
    pub rotation_error: f64,
    pub translation_error: f64,
    pub mask_iou: f64,
    pub point: PointErrorBreakdown,
    pub pose: PoseErrorBreakdown,
    pub iou_per_cluster: Vec<f64>,
}

pub fn evaluate(
    pred: &Clustering,
    models: &[RigidTransform],
    scene: &LabeledScene,
) -> Result<EvalReport> {
    let point = point_error(pred, models, scene)?;
    let pose = pose_error(pred, models, scene)?;
    let iou_per_cluster = mask_iou_per_cluster(pred, &scene.truth_clustering())?;
    Ok(EvalReport {
        point_error: point.object_mean,
        rotation_error: pose.rotation_error,
        translation_error: pose.translation_error,
        mask_iou: mask_iou(pred, &scene.truth_clustering())?,
        point,
        pose,
        iou_per_cluster,
    })
}
