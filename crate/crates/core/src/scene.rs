//! Synthetic labeled scenes: several rigid objects with bounded uniform
//! noise, separated by more than τ, plus outliers. Also builds
//! controlled initial clusterings that satisfy the goodness conditions.

use rand::Rng;

use crate::clustering::{
    check_goodness, d_cluster, euclidean_cluster, fragment_cluster, Clustering, SpatialGrid,
    UNASSIGNED,
};
use crate::error::{Error, Result};
use crate::geometry::{
    random_in_ball, random_in_cube, random_transform, random_unit_vector, Correspondence,
    CorrespondenceSet, RigidTransform, RngSeed, Vec3,
};

/// Outlier a-points keep at least this many τ from every object point.
pub const OUTLIER_CLEARANCE: f64 = 1.5;
/// Outlier b-points are uniform in a ball of this many B.
pub const OUTLIER_B_RADIUS: f64 = 3.0;

const PLACEMENT_RESTARTS: usize = 50;
const PLACEMENT_TRIES: usize = 500;
const WALK_TRIES: usize = 100;
const OUTLIER_TRIES_PER_POINT: usize = 1000;

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub num_objects: usize,
    pub points_per_object: Vec<usize>,
    /// Half-width of the per-coordinate uniform noise.
    pub sigma: f64,
    /// Connectivity radius.
    pub tau: f64,
    /// Bound on ‖a_i‖.
    pub bound: f64,
    pub num_outliers: usize,
    /// Minimum gap between points of different objects; must exceed `tau`.
    pub separation_margin: f64,
    pub seed: RngSeed,
}

impl SceneSpec {
    /// `num_objects` objects of `points` points each, margin 2τ, no outliers.
    pub fn uniform(
        num_objects: usize,
        points: usize,
        sigma: f64,
        tau: f64,
        bound: f64,
        seed: u64,
    ) -> Self {
        Self {
            num_objects,
            points_per_object: vec![points; num_objects],
            sigma,
            tau,
            bound,
            num_outliers: 0,
            separation_margin: 2.0 * tau,
            seed: RngSeed(seed),
        }
    }

    pub fn with_outliers(mut self, num_outliers: usize) -> Self {
        self.num_outliers = num_outliers;
        self
    }

    pub fn total_points(&self) -> usize {
        self.points_per_object.iter().sum::<usize>() + self.num_outliers
    }

    /// Radius of the ball each object's a-points are confined to.
    pub fn blob_radius(&self) -> f64 {
        self.bound / (1.0 + (self.num_objects as f64).cbrt()) - self.separation_margin / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_objects == 0 {
            return bad("num_objects must be positive".into());
        }
        if self.points_per_object.len() != self.num_objects {
            return bad(format!(
                "points_per_object has {} entries for {} objects",
                self.points_per_object.len(),
                self.num_objects
            ));
        }
        if self.points_per_object.contains(&0) {
            return bad("every object needs at least one point".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return bad(format!("bound must be positive, got {}", self.bound));
        }
        if !(self.separation_margin > self.tau && self.separation_margin.is_finite()) {
            return bad(format!(
                "separation_margin {} must exceed tau {}",
                self.separation_margin, self.tau
            ));
        }
        Ok(())
    }
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub correspondences: CorrespondenceSet,
    /// 0 for outliers, `j` for object `j` (1-based).
    pub true_labels: Vec<usize>,
    pub true_transforms: Vec<RigidTransform>,
    pub spec: SceneSpec,
}

impl LabeledScene {
    pub fn truth_clustering(&self) -> Clustering {
        Clustering::from_labels(self.true_labels.clone())
    }

    /// Indices of object `j` (1-based).
    pub fn object_indices(&self, j: usize) -> Vec<usize> {
        (0..self.true_labels.len())
            .filter(|&i| self.true_labels[i] == j)
            .collect()
    }

    pub fn outlier_indices(&self) -> Vec<usize> {
        self.object_indices(UNASSIGNED)
    }
}

/// Samples a scene. Objects are random-walk blobs with steps of at most τ/2
/// (τ-connected by construction) confined to disjoint balls inside the
/// bound; outliers keep 1.5τ clearance from every object point.
pub fn generate_scene(spec: &SceneSpec) -> Result<LabeledScene> {
    spec.validate()?;
    let radius = spec.blob_radius();
    if radius <= 0.0 {
        return Err(Error::InfeasibleScene(format!(
            "no room for {} objects with margin {} inside bound {}",
            spec.num_objects, spec.separation_margin, spec.bound
        )));
    }
    let mut rng = spec.seed.rng();
    let centers = place_centers(spec, radius, &mut rng)?;

    let mut items = Vec::with_capacity(spec.total_points());
    let mut labels = Vec::with_capacity(spec.total_points());
    let mut transforms = Vec::with_capacity(spec.num_objects);
    for (j, (center, &count)) in centers.iter().zip(&spec.points_per_object).enumerate() {
        let transform = random_transform(&mut rng, spec.bound);
        for a in random_walk_blob(center, radius, count, spec.tau / 2.0, &mut rng) {
            let b = transform.apply(&a) + random_in_cube(&mut rng, spec.sigma);
            items.push(Correspondence::new(a, b));
            labels.push(j + 1);
        }
        transforms.push(transform);
    }

    let object_points: Vec<Vec3> = items.iter().map(|c: &Correspondence| c.a).collect();
    let clearance = OUTLIER_CLEARANCE * spec.tau;
    let grid = SpatialGrid::new(&object_points, clearance);
    for _ in 0..spec.num_outliers {
        let mut placed = None;
        for _ in 0..OUTLIER_TRIES_PER_POINT {
            let a = random_in_ball(&mut rng, spec.bound);
            let mut clear = true;
            grid.for_each_near(&a, |k| clear &= (object_points[k] - a).norm() >= clearance);
            if clear {
                placed = Some(a);
                break;
            }
        }
        let a = placed
            .ok_or_else(|| Error::InfeasibleScene("no free space left for outliers".into()))?;
        let b = random_in_ball(&mut rng, OUTLIER_B_RADIUS * spec.bound);
        items.push(Correspondence::new(a, b));
        labels.push(UNASSIGNED);
    }

    let scene = LabeledScene {
        correspondences: CorrespondenceSet::new(items)?,
        true_labels: labels,
        true_transforms: transforms,
        spec: spec.clone(),
    };
    let report = validate_scene(&scene);
    if !report.pass {
        return Err(Error::InfeasibleScene(format!(
            "generated scene failed validation: {:?}",
            report.failures
        )));
    }
    Ok(scene)
}

fn place_centers<R: Rng>(spec: &SceneSpec, radius: f64, rng: &mut R) -> Result<Vec<Vec3>> {
    let min_gap = 2.0 * radius + spec.separation_margin;
    let reach = spec.bound - radius;
    for _ in 0..PLACEMENT_RESTARTS {
        let mut centers: Vec<Vec3> = Vec::with_capacity(spec.num_objects);
        for _ in 0..spec.num_objects {
            let found = (0..PLACEMENT_TRIES)
                .map(|_| random_in_ball(rng, reach))
                .find(|c| centers.iter().all(|o| (o - c).norm() > min_gap));
            match found {
                Some(c) => centers.push(c),
                None => break,
            }
        }
        if centers.len() == spec.num_objects {
            return Ok(centers);
        }
    }
    Err(Error::InfeasibleScene(format!(
        "cannot pack {} objects of radius {radius:.4} with gap {} inside bound {}",
        spec.num_objects, spec.separation_margin, spec.bound
    )))
}

/// Random walk of `count` points starting at `center`, each step of length
/// in (0, max_step], never leaving the ball of `radius` about `center`.
fn random_walk_blob<R: Rng>(
    center: &Vec3,
    radius: f64,
    count: usize,
    max_step: f64,
    rng: &mut R,
) -> Vec<Vec3> {
    let mut points = Vec::with_capacity(count);
    let mut current = *center;
    points.push(current);
    while points.len() < count {
        let mut next = None;
        for _ in 0..WALK_TRIES {
            let len = max_step * (1.0 - rng.random::<f64>());
            let p = current + random_unit_vector(rng) * len;
            if (p - center).norm() <= radius {
                next = Some(p);
                break;
            }
        }
        current = next.unwrap_or_else(|| {
            let to_center = center - current;
            current + to_center * (max_step / to_center.norm()).min(1.0)
        });
        points.push(current);
    }
    points
}

/// Which of the ground-truth conditions a scene satisfies.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    /// Every labeled point's residual under its object's motion is within σ (∞-norm).
    pub noise_bounded: bool,
    /// Points of different objects are more than τ apart.
    pub objects_separated: bool,
    /// Every a-point lies within the bound.
    pub bounded: bool,
    /// Every outlier is more than τ from every object.
    pub outliers_isolated: bool,
    /// Per object: τ-connected.
    pub objects_connected: Vec<bool>,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// Checks a scene against its own spec by brute force.
pub fn validate_scene(scene: &LabeledScene) -> SceneReport {
    let spec = &scene.spec;
    let cs = &scene.correspondences;
    let m = scene.true_transforms.len();
    let mut failures = Vec::new();

    let shape_ok = scene.true_labels.len() == cs.len() && scene.true_labels.iter().all(|&l| l <= m);
    if !shape_ok {
        failures.push("labels do not match correspondences or objects".to_string());
    }
    let groups: Vec<Vec<Vec3>> = (1..=m)
        .map(|j| {
            cs.iter()
                .zip(&scene.true_labels)
                .filter(|(_, &l)| l == j)
                .map(|(c, _)| c.a)
                .collect()
        })
        .collect();

    let noise_bounded = shape_ok
        && cs.iter().zip(&scene.true_labels).all(|(c, &l)| {
            l == UNASSIGNED || scene.true_transforms[l - 1].residual(c).amax() <= spec.sigma + 1e-12
        });
    if !noise_bounded {
        failures.push("noise exceeds sigma".into());
    }

    let mut objects_separated = true;
    'outer: for x in 0..groups.len() {
        for y in x + 1..groups.len() {
            for p in &groups[x] {
                if d_cluster(&groups[y], p) <= spec.tau {
                    objects_separated = false;
                    break 'outer;
                }
            }
        }
    }
    if !objects_separated {
        failures.push("objects closer than tau".into());
    }

    let bounded = cs.iter().all(|c| c.a.norm() <= spec.bound * (1.0 + 1e-12));
    if !bounded {
        failures.push("a-point outside bound".into());
    }

    let outliers_isolated = shape_ok
        && cs
            .iter()
            .zip(&scene.true_labels)
            .filter(|(_, &l)| l == UNASSIGNED)
            .all(|(c, _)| groups.iter().all(|g| d_cluster(g, &c.a) > spec.tau));
    if !outliers_isolated {
        failures.push("outlier within tau of an object".into());
    }

    let objects_connected: Vec<bool> = groups
        .iter()
        .map(|g| crate::clustering::is_tau_connected(g, spec.tau))
        .collect();
    if objects_connected.iter().any(|&c| !c) {
        failures.push("object not tau-connected".into());
    }

    SceneReport {
        noise_bounded,
        objects_separated,
        bounded,
        outliers_isolated,
        objects_connected,
        pass: failures.is_empty(),
        failures,
    }
}

/// Fragment sizes `[L, s, …, s]` for an object of `n` points split into `k`
/// parts, with `s = ⌊n / (2α + k − 1)⌋` so the largest exceeds α times
/// every other with a factor-two margin.
pub fn good_fragment_sizes(n: usize, alpha: f64, k: usize) -> Result<Vec<usize>> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must exceed 1, got {alpha}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one fragment".into()));
    }
    if k == 1 {
        return Ok(vec![n]);
    }
    let small = (n as f64 / (2.0 * alpha + (k - 1) as f64)).floor() as usize;
    if small == 0 {
        return Err(Error::InvalidParameter(format!(
            "object of {n} points too small for {k} fragments at alpha {alpha}"
        )));
    }
    let mut sizes = vec![n - (k - 1) * small];
    sizes.extend(std::iter::repeat(small).take(k - 1));
    Ok(sizes)
}

/// Splits every object into `num_fragments` τ-connected fragments whose
/// largest exceeds `alpha` times each other; outliers form their own
/// τ-connected clusters.
pub fn make_good_initial_clustering(
    scene: &LabeledScene,
    alpha: f64,
    num_fragments: usize,
    seed: RngSeed,
) -> Result<Clustering> {
    let sizes = scene
        .spec
        .points_per_object
        .iter()
        .enumerate()
        .map(|(j, _)| good_fragment_sizes(scene.object_indices(j + 1).len(), alpha, num_fragments))
        .collect::<Result<Vec<_>>>()?;
    make_initial_clustering_with_sizes(scene, &sizes, alpha, seed)
}

/// Like [`make_good_initial_clustering`] with explicit fragment sizes per
/// object. Rejects sizes whose largest fragment does not exceed `alpha`
/// times every other.
pub fn make_initial_clustering_with_sizes(
    scene: &LabeledScene,
    sizes: &[Vec<usize>],
    alpha: f64,
    seed: RngSeed,
) -> Result<Clustering> {
    let m = scene.true_transforms.len();
    if sizes.len() != m {
        return Err(Error::LengthMismatch {
            left: sizes.len(),
            right: m,
        });
    }
    let mut labels = vec![UNASSIGNED; scene.correspondences.len()];
    let mut next = 0;
    for (j, object_sizes) in sizes.iter().enumerate() {
        let mut sorted = object_sizes.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        if sorted.len() > 1 && !(sorted[0] as f64 > alpha * sorted[1] as f64) {
            return Err(Error::InvalidParameter(format!(
                "object {}: fragment sizes {object_sizes:?} do not satisfy ratio {alpha}",
                j + 1
            )));
        }
        let indices = scene.object_indices(j + 1);
        let fragments = fragment_cluster(
            &scene.correspondences,
            &indices,
            scene.spec.tau,
            object_sizes,
            RngSeed(seed.0.wrapping_add(j as u64)),
        )?;
        for frag in fragments {
            next += 1;
            for i in frag {
                labels[i] = next;
            }
        }
    }
    let outliers = scene.outlier_indices();
    if !outliers.is_empty() {
        let sub = euclidean_cluster(&scene.correspondences.select(&outliers), scene.spec.tau);
        for (k, &i) in outliers.iter().enumerate() {
            labels[i] = next + sub.label(k);
        }
    }
    let clustering = Clustering::from_labels(labels);
    let report = check_goodness(&clustering, scene, alpha, 1);
    if !report.pass {
        return Err(Error::Fragmentation(format!(
            "constructed clustering is not good: {report:?}"
        )));
    }
    Ok(clustering)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_distance;
    use crate::horn::horn_register;

    #[test]
    fn single_noiseless_object_is_recovered_exactly() {
        let scene = generate_scene(&SceneSpec::uniform(1, 100, 0.0, 0.05, 1.0, 4)).unwrap();
        let est = horn_register(&scene.correspondences).unwrap();
        let t = &scene.true_transforms[0];
        assert!(geodesic_distance(&est.transform.rotation, &t.rotation).unwrap() <= 1e-9);
        assert!((est.transform.translation - t.translation).norm() <= 1e-9);
    }

    #[test]
    fn generated_scene_passes_all_checks() {
        let spec = SceneSpec::uniform(3, 400, 0.01, 0.05, 1.0, 8).with_outliers(40);
        let scene = generate_scene(&spec).unwrap();
        let report = validate_scene(&scene);
        assert!(report.pass, "{report:?}");
        assert_eq!(scene.correspondences.len(), 1240);
        assert_eq!(scene.outlier_indices().len(), 40);
        for t in &scene.true_transforms {
            assert!(t.rotation.is_valid());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::uniform(2, 200, 0.02, 0.05, 1.0, 31).with_outliers(10);
        assert_eq!(
            generate_scene(&spec).unwrap(),
            generate_scene(&spec).unwrap()
        );
        let other = SceneSpec {
            seed: RngSeed(32),
            ..spec.clone()
        };
        assert_ne!(
            generate_scene(&spec).unwrap(),
            generate_scene(&other).unwrap()
        );
    }

    #[test]
    fn infeasible_packing_is_reported() {
        let spec = SceneSpec::uniform(40, 10, 0.0, 0.3, 1.0, 1);
        assert!(matches!(
            generate_scene(&spec),
            Err(Error::InfeasibleScene(_))
        ));
        let mut spec = SceneSpec::uniform(2, 10, 0.0, 0.1, 1.0, 1);
        spec.separation_margin = 0.05;
        assert!(matches!(
            generate_scene(&spec),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn relabeled_point_breaks_outlier_condition() {
        let mut scene = generate_scene(&SceneSpec::uniform(2, 200, 0.01, 0.05, 1.0, 5)).unwrap();
        scene.true_labels[17] = UNASSIGNED;
        let report = validate_scene(&scene);
        assert!(!report.outliers_isolated);
        assert!(!report.pass);
    }

    #[test]
    fn overstated_sigma_still_passes_noise_check() {
        let mut scene = generate_scene(&SceneSpec::uniform(2, 200, 0.01, 0.05, 1.0, 6)).unwrap();
        scene.spec.sigma *= 10.0;
        assert!(validate_scene(&scene).noise_bounded);
        scene.spec.sigma = 0.001;
        assert!(!validate_scene(&scene).noise_bounded);
    }

    #[test]
    fn noise_variance_matches_uniform() {
        let sigma = 0.2;
        let scene = generate_scene(&SceneSpec::uniform(1, 100_000, sigma, 0.05, 1.0, 12)).unwrap();
        let t = &scene.true_transforms[0];
        let eps: Vec<Vec3> = scene
            .correspondences
            .iter()
            .map(|c| t.residual(c))
            .collect();
        let n = eps.len() as f64;
        for k in 0..3 {
            let mean = eps.iter().map(|e| e[k]).sum::<f64>() / n;
            let var = eps.iter().map(|e| (e[k] - mean).powi(2)).sum::<f64>() / n;
            let expected = sigma * sigma / 3.0;
            assert!(
                (var / expected - 1.0).abs() < 0.03,
                "axis {k}: {var} vs {expected}"
            );
        }
    }

    #[test]
    fn fragment_size_rule() {
        assert_eq!(
            good_fragment_sizes(600, 2.0, 3).unwrap(),
            vec![400, 100, 100]
        );
        assert_eq!(good_fragment_sizes(77, 2.0, 1).unwrap(), vec![77]);
        assert!(good_fragment_sizes(3, 2.0, 3).is_err());
        assert!(good_fragment_sizes(100, 1.0, 3).is_err());
    }

    #[test]
    fn single_fragment_equals_ground_truth() {
        let scene = generate_scene(&SceneSpec::uniform(3, 150, 0.01, 0.05, 1.0, 9)).unwrap();
        let c = make_good_initial_clustering(&scene, 2.0, 1, RngSeed(0)).unwrap();
        assert_eq!(c, scene.truth_clustering());
    }

    #[test]
    fn three_fragments_pass_goodness() {
        let scene = generate_scene(&SceneSpec::uniform(2, 600, 0.01, 0.05, 1.0, 10)).unwrap();
        let c = make_good_initial_clustering(&scene, 2.0, 3, RngSeed(1)).unwrap();
        assert_eq!(c.num_clusters(), 6);
        let report = check_goodness(&c, &scene, 2.0, 100);
        assert!(report.pass, "{report:?}");
        assert!(report.measured_alpha.iter().all(|&a| a >= 2.0));
    }

    #[test]
    fn equal_fragments_are_rejected() {
        let scene = generate_scene(&SceneSpec::uniform(1, 200, 0.01, 0.05, 1.0, 2)).unwrap();
        let err = make_initial_clustering_with_sizes(&scene, &[vec![100, 100]], 2.0, RngSeed(0));
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn goodness_detects_violations() {
        let scene = generate_scene(&SceneSpec::uniform(2, 300, 0.01, 0.05, 1.0, 3)).unwrap();
        // Two equal halves of object 1.
        let idx = scene.object_indices(1);
        let halves = fragment_cluster(
            &scene.correspondences,
            &idx,
            scene.spec.tau,
            &[150, 150],
            RngSeed(4),
        )
        .unwrap();
        let mut labels = scene.true_labels.clone();
        for &i in &halves[1] {
            labels[i] = 3;
        }
        let report = check_goodness(&Clustering::from_labels(labels), &scene, 2.0, 10);
        assert!(!report.identifying[0]);
        assert!(report.identifying[1]);
        assert!(!report.pass);

        // One cluster straddling both objects.
        let merged = Clustering::from_labels(vec![1; scene.true_labels.len()]);
        let report = check_goodness(&merged, &scene, 2.0, 10);
        assert!(!report.pure[0]);
        assert!(!report.connected[0]);
        assert!(!report.pass);
    }
}
