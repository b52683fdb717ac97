use rand::seq::index::sample;
use rand::Rng;

use crate::clustering::{Clustering, UNASSIGNED};
use crate::error::{Error, Result};
use crate::geometry::{Correspondence, CorrespondenceSet, RigidTransform, RngSeed};
use crate::horn::horn_register_items;

#[derive(Debug, Clone, PartialEq)]
pub struct TLinkageConfig {
    /// Preference decay constant.
    pub tau_t: f64,
    /// Preferences vanish for residuals above `5 * tau`.
    pub tau: f64,
    pub num_hypotheses: usize,
    pub seed: RngSeed,
}

impl TLinkageConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_t", self.tau_t), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// φ = exp(−r/τ_t) for residual r ≤ 5τ, else 0.
pub fn tlinkage_preference(
    c: &Correspondence,
    hypothesis: &RigidTransform,
    cfg: &TLinkageConfig,
) -> f64 {
    let r = hypothesis.residual(c).norm();
    if r <= 5.0 * cfg.tau {
        (-r / cfg.tau_t).exp()
    } else {
        0.0
    }
}

/// 1 − ⟨u,v⟩ / (‖u‖² + ‖v‖² − ⟨u,v⟩); two zero vectors are at distance 1.
pub fn tanimoto_distance(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "preference vectors differ in length");
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (x, y) in u.iter().zip(v) {
        uv += x * y;
        uu += x * x;
        vv += y * y;
    }
    let denom = uu + vv - uv;
    if denom <= 0.0 {
        return 1.0;
    }
    (1.0 - uv / denom).clamp(0.0, 1.0)
}

/// Rigid hypotheses fit on 3-point samples drawn inside single clusters.
pub fn generate_hypotheses(
    cs: &CorrespondenceSet,
    initial: &Clustering,
    cfg: &TLinkageConfig,
) -> Result<Vec<RigidTransform>> {
    let pools: Vec<Vec<usize>> = initial
        .members()
        .into_iter()
        .filter(|m| m.len() >= 3)
        .collect();
    if pools.is_empty() || cfg.num_hypotheses == 0 {
        return Ok(Vec::new());
    }
    let mut rng = cfg.seed.rng();
    let mut out = Vec::with_capacity(cfg.num_hypotheses);
    for _ in 0..cfg.num_hypotheses {
        let pool = &pools[rng.random_range(0..pools.len())];
        let triple: Vec<Correspondence> = sample(&mut rng, pool.len(), 3)
            .iter()
            .map(|k| cs[pool[k]])
            .collect();
        out.push(horn_register_items(&triple)?.transform);
    }
    Ok(out)
}

/// Agglomerative merging of `initial` clusters by Tanimoto distance of
/// their preference vectors. Unassigned points stay unassigned.
pub fn tlinkage_cluster(
    cs: &CorrespondenceSet,
    initial: &Clustering,
    cfg: &TLinkageConfig,
) -> Result<Clustering> {
    cfg.validate()?;
    if initial.len() != cs.len() {
        return Err(Error::LengthMismatch {
            left: cs.len(),
            right: initial.len(),
        });
    }
    let hyps = generate_hypotheses(cs, initial, cfg)?;
    if hyps.is_empty() {
        return Ok(initial.clone());
    }
    let members = initial.members();
    // prefs[k] is the element-wise minimum over the members of cluster k
    let mut prefs: Vec<Option<Vec<f64>>> = members
        .iter()
        .map(|m| {
            let mut p = vec![1.0f64; hyps.len()];
            for &i in m {
                for (pj, h) in p.iter_mut().zip(&hyps) {
                    *pj = pj.min(tlinkage_preference(&cs[i], h, cfg));
                }
            }
            if m.is_empty() {
                p.fill(0.0);
            }
            Some(p)
        })
        .collect();
    let k = prefs.len();
    let mut parent: Vec<usize> = (0..k).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..k {
            let Some(pa) = &prefs[a] else { continue };
            for b in a + 1..k {
                let Some(pb) = &prefs[b] else { continue };
                let d = tanimoto_distance(pa, pb);
                if d < 1.0 && best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let Some((_, a, b)) = best else { break };
        let pb = prefs[b].take().expect("live cluster");
        let pa = prefs[a].as_mut().expect("live cluster");
        for (x, y) in pa.iter_mut().zip(pb) {
            *x = x.min(y);
        }
        parent[b] = a;
    }
    let root = |mut c: usize| {
        while parent[c] != c {
            c = parent[c];
        }
        c
    };
    let labels = initial
        .labels()
        .iter()
        .map(|&l| {
            if l == UNASSIGNED {
                UNASSIGNED
            } else {
                root(l - 1) + 1
            }
        })
        .collect();
    Ok(Clustering::from_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::scene::{generate_scene, SceneSpec};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn cfg(n: usize) -> TLinkageConfig {
        TLinkageConfig {
            tau_t: 0.01,
            tau: 0.05,
            num_hypotheses: n,
            seed: RngSeed(1),
        }
    }

    #[test]
    fn preference_examples() {
        let c = Correspondence::new(Vec3::zeros(), Vec3::zeros());
        let mut cfg = cfg(1);
        assert_eq!(
            tlinkage_preference(&c, &RigidTransform::identity(), &cfg),
            1.0
        );
        let shifted = RigidTransform::from_translation(Vec3::new(0.01, 0.0, 0.0));
        let p = tlinkage_preference(&c, &shifted, &cfg);
        assert!((p - (-1f64).exp()).abs() < 1e-12);
        cfg.tau = 0.001;
        assert_eq!(tlinkage_preference(&c, &shifted, &cfg), 0.0);
    }

    #[test]
    fn tanimoto_examples() {
        assert_eq!(tanimoto_distance(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert_eq!(tanimoto_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert!((tanimoto_distance(&[1.0, 0.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
        assert_eq!(tanimoto_distance(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    proptest! {
        #[test]
        fn tanimoto_range_and_symmetry(u in proptest::collection::vec(0.0f64..1.0, 6),
                                       v in proptest::collection::vec(0.0f64..1.0, 6)) {
            let d = tanimoto_distance(&u, &v);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, tanimoto_distance(&v, &u));
            if u.iter().any(|&x| x > 0.0) {
                prop_assert!(tanimoto_distance(&u, &u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fragmented_object_merges() {
        let scene = generate_scene(&SceneSpec::uniform(1, 90, 0.0, 0.05, 1.0, 2)).unwrap();
        let labels: Vec<usize> = (0..90).map(|i| i / 30 + 1).collect();
        let initial = Clustering::from_labels(labels);
        let out = tlinkage_cluster(&scene.correspondences, &initial, &cfg(20)).unwrap();
        assert_eq!(out.num_clusters(), 1);
        assert_eq!(out.unassigned_count(), 0);
    }

    #[test]
    fn separate_motions_do_not_merge() {
        let scene = generate_scene(&SceneSpec::uniform(2, 60, 0.0, 0.05, 1.0, 5)).unwrap();
        let truth = scene.truth_clustering();
        let out = tlinkage_cluster(&scene.correspondences, &truth, &cfg(30)).unwrap();
        assert_eq!(out, truth);
    }

    #[test]
    fn zero_hypotheses_is_identity() {
        let scene = generate_scene(&SceneSpec::uniform(2, 40, 0.0, 0.05, 1.0, 5)).unwrap();
        let initial = Clustering::from_labels((0..80).map(|i| i / 10 + 1).collect());
        assert_eq!(
            tlinkage_cluster(&scene.correspondences, &initial, &cfg(0)).unwrap(),
            initial
        );
    }

    #[test]
    fn result_coarsens_initial() {
        let scene =
            generate_scene(&SceneSpec::uniform(3, 60, 0.005, 0.05, 1.0, 9).with_outliers(20))
                .unwrap();
        let cs = &scene.correspondences;
        let initial = Clustering::from_labels((0..cs.len()).map(|i| i / 15 + 1).collect());
        let out = tlinkage_cluster(cs, &initial, &cfg(50)).unwrap();
        assert!(out.num_clusters() >= 1 && out.num_clusters() <= initial.num_clusters());
        for i in 0..cs.len() {
            for j in 0..cs.len() {
                if initial.label(i) == initial.label(j) {
                    assert_eq!(out.label(i), out.label(j));
                }
            }
        }
        assert_eq!(out, tlinkage_cluster(cs, &initial, &cfg(50)).unwrap());
    }

    #[test]
    fn hypotheses_fit_within_clusters() {
        let scene = generate_scene(&SceneSpec::uniform(2, 50, 0.0, 0.05, 1.0, 3)).unwrap();
        let hyps = generate_hypotheses(&scene.correspondences, &scene.truth_clustering(), &cfg(10))
            .unwrap();
        assert_eq!(hyps.len(), 10);
        for h in hyps {
            let exact = scene.true_transforms.iter().any(|g| {
                (g.rotation.matrix() - h.rotation.matrix()).norm() < 1e-8
                    && (g.translation - h.translation).norm() < 1e-8
            });
            assert!(exact);
        }
    }
}
