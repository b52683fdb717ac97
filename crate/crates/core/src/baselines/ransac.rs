use rand::seq::index::sample;
use rand::Rng;

use crate::clustering::{Clustering, UNASSIGNED};
use crate::error::{Error, Result};
use crate::geometry::{Correspondence, CorrespondenceSet, RigidTransform, RngSeed};
use crate::horn::{horn_register_items, horn_register_subset};

/// Floor on the default threshold so exact data still counts as inliers.
pub const MIN_INLIER_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    /// Residual L2 cutoff ‖b − R̂a − t̂‖ for inliers.
    pub inlier_threshold: f64,
    pub max_trials: usize,
    /// Models with fewer inliers are rejected; at least 3.
    pub min_model_inliers: usize,
    pub seed: RngSeed,
}

impl RansacConfig {
    /// Threshold √3·σ: the largest residual a point with noise in
    /// `[−σ, σ]³` can have under its true motion, floored at
    /// [`MIN_INLIER_THRESHOLD`].
    pub fn for_noise(sigma: f64, seed: RngSeed) -> Self {
        Self {
            inlier_threshold: (3f64.sqrt() * sigma).max(MIN_INLIER_THRESHOLD),
            max_trials: 500,
            min_model_inliers: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold >= 0.0 && self.inlier_threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "inlier_threshold must be finite and nonnegative, got {}",
                self.inlier_threshold
            )));
        }
        if self.max_trials == 0 {
            return Err(Error::InvalidParameter(
                "max_trials must be positive".into(),
            ));
        }
        if self.min_model_inliers < 3 {
            return Err(Error::InvalidParameter(format!(
                "min_model_inliers must be at least 3, got {}",
                self.min_model_inliers
            )));
        }
        Ok(())
    }
}

/// A consensus model and its inliers (global indices, increasing).
#[derive(Debug, Clone, PartialEq)]
pub struct RansacModel {
    pub transform: RigidTransform,
    pub inliers: Vec<usize>,
}

fn inliers_of(
    cs: &CorrespondenceSet,
    active: &[usize],
    t: &RigidTransform,
    thr: f64,
) -> Vec<usize> {
    active
        .iter()
        .copied()
        .filter(|&i| t.residual(&cs[i]).norm() <= thr)
        .collect()
}

/// Best-consensus rigid model over `active`, refit on its inliers.
///
/// Returns `Ok(None)` when the best consensus is below
/// `min_model_inliers`. Ties between trials go to the earliest trial.
pub fn ransac_single<R: Rng>(
    cs: &CorrespondenceSet,
    active: &[usize],
    cfg: &RansacConfig,
    rng: &mut R,
) -> Result<Option<RansacModel>> {
    cfg.validate()?;
    if active.len() < 3 {
        return Err(Error::Underdetermined(active.len()));
    }
    let mut best: Option<(usize, RigidTransform)> = None;
    for _ in 0..cfg.max_trials {
        let picks = sample(rng, active.len(), 3);
        let triple: Vec<Correspondence> = picks.iter().map(|k| cs[active[k]]).collect();
        let t = horn_register_items(&triple)?.transform;
        let count = active
            .iter()
            .filter(|&&i| t.residual(&cs[i]).norm() <= cfg.inlier_threshold)
            .count();
        let better = match &best {
            None => true,
            Some((c, _)) => count > *c,
        };
        if better {
            best = Some((count, t));
        }
    }
    let (count, t) = best.expect("at least one trial");
    if count < cfg.min_model_inliers {
        return Ok(None);
    }
    let inliers = inliers_of(cs, active, &t, cfg.inlier_threshold);
    let refit = horn_register_subset(cs, &inliers)?.transform;
    let refit_inliers = inliers_of(cs, active, &refit, cfg.inlier_threshold);
    let model = if refit_inliers.len() >= inliers.len() {
        RansacModel {
            transform: refit,
            inliers: refit_inliers,
        }
    } else {
        RansacModel {
            transform: t,
            inliers,
        }
    };
    Ok(Some(model))
}

/// Repeatedly extracts the best RANSAC model and removes its inliers until
/// no model is found or too few points remain. Leftovers get label 0.
pub fn sequential_ransac(
    cs: &CorrespondenceSet,
    cfg: &RansacConfig,
) -> Result<(Clustering, Vec<RigidTransform>)> {
    cfg.validate()?;
    let mut rng = cfg.seed.rng();
    let mut labels = vec![UNASSIGNED; cs.len()];
    let mut active: Vec<usize> = (0..cs.len()).collect();
    let mut models = Vec::new();
    while active.len() >= cfg.min_model_inliers.max(3) {
        let Some(model) = ransac_single(cs, &active, cfg, &mut rng)? else {
            break;
        };
        models.push(model.transform);
        for &i in &model.inliers {
            labels[i] = models.len();
        }
        active.retain(|&i| labels[i] == UNASSIGNED);
    }
    Ok((Clustering::from_labels(labels), models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_distance, random_in_ball, random_transform, Vec3};
    use crate::scene::{generate_scene, SceneSpec};

    fn cfg(thr: f64) -> RansacConfig {
        RansacConfig {
            inlier_threshold: thr,
            max_trials: 200,
            min_model_inliers: 10,
            seed: RngSeed(7),
        }
    }

    #[test]
    fn single_noiseless_model() {
        let scene = generate_scene(&SceneSpec::uniform(1, 120, 0.0, 0.05, 1.0, 1)).unwrap();
        let all: Vec<usize> = (0..120).collect();
        let m = ransac_single(
            &scene.correspondences,
            &all,
            &cfg(1e-6),
            &mut RngSeed(1).rng(),
        )
        .unwrap()
        .unwrap();
        assert_eq!(m.inliers, all);
        let t = &scene.true_transforms[0];
        assert!(geodesic_distance(&m.transform.rotation, &t.rotation).unwrap() <= 1e-9);
        assert!((m.transform.translation - t.translation).norm() <= 1e-9);
    }

    #[test]
    fn majority_model_of_a_mix() {
        let mut rng = RngSeed(3).rng();
        let (t1, t2) = (
            random_transform(&mut rng, 2.0),
            random_transform(&mut rng, 2.0),
        );
        let a: Vec<Vec3> = (0..100).map(|_| random_in_ball(&mut rng, 1.0)).collect();
        let b: Vec<Vec3> = a
            .iter()
            .enumerate()
            .map(|(i, p)| if i < 70 { t1.apply(p) } else { t2.apply(p) })
            .collect();
        let cs = CorrespondenceSet::from_pairs(&a, &b).unwrap();
        let all: Vec<usize> = (0..100).collect();
        let m = ransac_single(&cs, &all, &cfg(1e-6), &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(m.inliers, (0..70).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_active_points() {
        let scene = generate_scene(&SceneSpec::uniform(1, 20, 0.0, 0.05, 1.0, 1)).unwrap();
        let err = ransac_single(
            &scene.correspondences,
            &[0, 1],
            &cfg(0.1),
            &mut RngSeed(1).rng(),
        );
        assert_eq!(err, Err(Error::Underdetermined(2)));
    }

    #[test]
    fn sequential_recovers_two_motions() {
        let scene = generate_scene(&SceneSpec::uniform(2, 300, 0.001, 0.05, 1.0, 11)).unwrap();
        let c = RansacConfig::for_noise(0.001, RngSeed(2));
        let (clustering, models) = sequential_ransac(&scene.correspondences, &c).unwrap();
        assert_eq!(models.len(), 2);
        assert_eq!(clustering.num_clusters(), 2);
        let iou = crate::metrics::mask_iou(&clustering, &scene.truth_clustering()).unwrap();
        assert!(iou >= 0.99, "{iou}");
    }

    #[test]
    fn pure_outliers_stay_unassigned() {
        let mut rng = RngSeed(5).rng();
        let a: Vec<Vec3> = (0..200).map(|_| random_in_ball(&mut rng, 1.0)).collect();
        let b: Vec<Vec3> = (0..200).map(|_| random_in_ball(&mut rng, 3.0)).collect();
        let cs = CorrespondenceSet::from_pairs(&a, &b).unwrap();
        let (clustering, models) = sequential_ransac(&cs, &cfg(1e-3)).unwrap();
        assert!(models.is_empty());
        assert_eq!(clustering.unassigned_count(), 200);
    }

    #[test]
    fn one_motion_gives_one_cluster() {
        let scene = generate_scene(&SceneSpec::uniform(1, 150, 0.0, 0.05, 1.0, 4)).unwrap();
        let (clustering, _) = sequential_ransac(&scene.correspondences, &cfg(1e-6)).unwrap();
        assert_eq!(clustering.num_clusters(), 1);
        assert_eq!(clustering.unassigned_count(), 0);
    }

    #[test]
    fn deterministic_under_seed() {
        let scene =
            generate_scene(&SceneSpec::uniform(3, 200, 0.01, 0.05, 1.0, 8).with_outliers(30))
                .unwrap();
        let c = RansacConfig::for_noise(0.01, RngSeed(9));
        assert_eq!(
            sequential_ransac(&scene.correspondences, &c).unwrap(),
            sequential_ransac(&scene.correspondences, &c).unwrap()
        );
    }
}
