use multireg::baselines::{sequential_ransac, RansacConfig};
use multireg::clustering::euclidean_cluster;
use multireg::em::{run_em, EmConfig};
use multireg::formats::{parse_scene, write_scene};
use multireg::geometry::{
    geodesic_distance, random_in_ball, random_in_cube, random_transform, CorrespondenceSet,
    RngSeed, Vec3,
};
use multireg::horn::horn_register;
use multireg::metrics::{evaluate, mask_iou};
use multireg::scene::{generate_scene, make_good_initial_clustering, SceneSpec};
use nalgebra::{Matrix3, Matrix4, Quaternion, SymmetricEigen, UnitQuaternion};

/// Closed-form quaternion solution: the top eigenvector of the 4×4 matrix
/// built from the centred cross-covariance.
fn quaternion_rotation(a: &[Vec3], b: &[Vec3]) -> Matrix3<f64> {
    let n = a.len() as f64;
    let ma = a.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let mb = b.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let s = a.iter().zip(b).fold(Matrix3::zeros(), |acc, (p, q)| {
        acc + (p - ma) * (q - mb).transpose()
    });
    let (xx, xy, xz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (yx, yy, yz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (zx, zy, zz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let k = Matrix4::new(
        xx + yy + zz, yz - zy,       zx - xz,       xy - yx,
        yz - zy,      xx - yy - zz,  xy + yx,       zx + xz,
        zx - xz,      xy + yx,       -xx + yy - zz, yz + zy,
        xy - yx,      zx + xz,       yz + zy,       -xx - yy + zz,
    );
    let eig = SymmetricEigen::new(k);
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top);
    UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]))
        .to_rotation_matrix()
        .into_inner()
}

#[test]
fn horn_agrees_with_quaternion_solution() {
    for seed in 0..50u64 {
        let mut rng = RngSeed(seed).rng();
        let t = random_transform(&mut rng, 1.0);
        let a: Vec<Vec3> = (0..40).map(|_| random_in_ball(&mut rng, 1.0)).collect();
        let b: Vec<Vec3> = a
            .iter()
            .map(|p| t.apply(p) + random_in_cube(&mut rng, 0.05))
            .collect();
        let est = horn_register(&CorrespondenceSet::from_pairs(&a, &b).unwrap()).unwrap();
        let oracle = quaternion_rotation(&a, &b);
        assert!(
            (est.transform.rotation.matrix() - oracle).norm() <= 1e-9,
            "seed {seed}"
        );
    }
}

#[test]
fn em_pipeline_with_outliers() {
    let spec = SceneSpec::uniform(3, 400, 0.002, 0.1, 1.0, 21).with_outliers(40);
    let scene = generate_scene(&spec).unwrap();
    let init = make_good_initial_clustering(&scene, 2.0, 3, RngSeed(21)).unwrap();
    let fit = run_em(&scene.correspondences, &init, &EmConfig::new(0.1)).unwrap();
    assert!(fit.converged);
    let transforms: Vec<_> = fit.models.iter().map(|m| m.transform).collect();
    let report = evaluate(&fit.clustering, &transforms, &scene).unwrap();
    assert!(report.mask_iou >= 0.97, "{}", report.mask_iou);
    assert!(report.rotation_error <= 1e-2, "{}", report.rotation_error);
}

#[test]
fn scene_survives_text_round_trip_and_refit() {
    let scene = generate_scene(&SceneSpec::uniform(2, 150, 0.0, 0.1, 1.0, 5)).unwrap();
    let back = parse_scene(&write_scene(&scene)).unwrap();
    assert_eq!(back, scene);
    for (j, members) in back.truth_clustering().members().iter().enumerate() {
        let est = horn_register(&back.correspondences.select(members)).unwrap();
        let err =
            geodesic_distance(&est.transform.rotation, &back.true_transforms[j].rotation).unwrap();
        assert!(err <= 1e-9);
    }
}

#[test]
fn euclidean_clustering_separates_noiseless_objects() {
    let scene = generate_scene(&SceneSpec::uniform(4, 120, 0.0, 0.1, 1.0, 9)).unwrap();
    let c = euclidean_cluster(&scene.correspondences, 0.1);
    assert_eq!(mask_iou(&c, &scene.truth_clustering()).unwrap(), 1.0);
}

#[test]
fn ransac_and_em_agree_on_clean_scene() {
    let scene = generate_scene(&SceneSpec::uniform(2, 300, 0.0, 0.1, 1.0, 13)).unwrap();
    let truth = scene.truth_clustering();
    let (rs, _) = sequential_ransac(
        &scene.correspondences,
        &RansacConfig::for_noise(0.0, RngSeed(1)),
    )
    .unwrap();
    let init = make_good_initial_clustering(&scene, 2.0, 3, RngSeed(13)).unwrap();
    let em = run_em(&scene.correspondences, &init, &EmConfig::new(0.1)).unwrap();
    assert_eq!(mask_iou(&rs, &truth).unwrap(), 1.0);
    assert_eq!(mask_iou(&em.clustering, &truth).unwrap(), 1.0);
}
