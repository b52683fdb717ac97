//! Partitions of correspondence indices, τ-connectivity, the `d_cluster`
//! distance, Euclidean-clustering initialization, region-growing
//! fragmentation and the goodness checker for initial clusterings.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, RngSeed, Vec3};
use crate::scene::LabeledScene;

/// Label of unassigned points (and of outliers in ground truth).
pub const UNASSIGNED: usize = 0;

/// A labeling of `n` correspondences: label 0 is unassigned, labels `1..=K`
/// are clusters and each of them is nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Clustering {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl Clustering {
    /// Builds a clustering from raw labels, dropping empty ids while keeping
    /// the relative order of the others.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let mut ids: Vec<usize> = labels
            .iter()
            .copied()
            .filter(|&l| l != UNASSIGNED)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let labels = labels
            .into_iter()
            .map(|l| match l {
                UNASSIGNED => UNASSIGNED,
                _ => ids.binary_search(&l).expect("label present") + 1,
            })
            .collect();
        Self {
            labels,
            num_clusters: ids.len(),
        }
    }

    /// Every point unassigned.
    pub fn unassigned(n: usize) -> Self {
        Self {
            labels: vec![UNASSIGNED; n],
            num_clusters: 0,
        }
    }

    /// A single cluster holding everything.
    pub fn single(n: usize) -> Self {
        Self::from_labels(vec![1; n])
    }

    /// Relabels clusters 1..K by decreasing size, ties by smallest member index.
    pub fn canonical_by_size(&self) -> Self {
        let members = self.members();
        let mut order: Vec<usize> = (0..self.num_clusters).collect();
        order.sort_by(|&x, &y| {
            members[y]
                .len()
                .cmp(&members[x].len())
                .then(members[x][0].cmp(&members[y][0]))
        });
        let mut remap = vec![0; self.num_clusters + 1];
        for (rank, &c) in order.iter().enumerate() {
            remap[c + 1] = rank + 1;
        }
        Self {
            labels: self.labels.iter().map(|&l| remap[l]).collect(),
            num_clusters: self.num_clusters,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Member indices of each cluster; entry `j` holds cluster `j + 1`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != UNASSIGNED {
                out[l - 1].push(i);
            }
        }
        out
    }

    /// Sizes of clusters 1..=K.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_clusters];
        for &l in &self.labels {
            if l != UNASSIGNED {
                out[l - 1] += 1;
            }
        }
        out
    }

    pub fn unassigned_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == UNASSIGNED).count()
    }

    /// Number of indices whose label differs from `other`.
    pub fn changes_from(&self, other: &Clustering) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Minimum Euclidean distance from `p` to any member of `cluster`;
/// `+∞` for an empty cluster.
pub fn d_cluster(cluster: &[Vec3], p: &Vec3) -> f64 {
    cluster
        .iter()
        .map(|q| (q - p).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

type CellKey = (i64, i64, i64);

/// Uniform spatial hash with cubic cells of side `cell`.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl SpatialGrid {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_for(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key_for(p: &Vec3, cell: f64) -> CellKey {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Calls `f` with every indexed point in the 27 cells around `p`. With
    /// cell side ≥ r this visits every point within distance r of `p`.
    pub fn for_each_near(&self, p: &Vec3, mut f: impl FnMut(usize)) {
        let (cx, cy, cz) = Self::key_for(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.cells.get(&(
                        cx.wrapping_add(dx),
                        cy.wrapping_add(dy),
                        cz.wrapping_add(dz),
                    )) {
                        v.iter().for_each(|&j| f(j));
                    }
                }
            }
        }
    }
}

/// Connected components of the graph with edges `‖p_i − p_j‖ ≤ tau`.
/// Returns a component id per point, ids in order of first appearance.
pub fn tau_components(points: &[Vec3], tau: f64) -> Vec<usize> {
    let mut uf = UnionFind::new(points.len());
    if tau > 0.0 && tau.is_finite() {
        let grid = SpatialGrid::new(points, tau);
        for (i, p) in points.iter().enumerate() {
            grid.for_each_near(p, |j| {
                if j > i && (points[j] - p).norm() <= tau {
                    uf.union(i, j);
                }
            });
        }
    }
    let mut ids = HashMap::new();
    (0..points.len())
        .map(|i| {
            let root = uf.find(i);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

/// Whether the τ-ball proximity graph over `points` is connected. Empty and
/// singleton sets are connected.
pub fn is_tau_connected(points: &[Vec3], tau: f64) -> bool {
    points.len() <= 1 || tau_components(points, tau).iter().all(|&c| c == 0)
}

/// Connected components of the τ-graph over the a-points, labeled 1..K by
/// decreasing size (ties by smallest member index). Every point is labeled.
pub fn euclidean_cluster(cs: &CorrespondenceSet, tau: f64) -> Clustering {
    let comps = tau_components(&cs.a_points(), tau);
    Clustering::from_labels(comps.into_iter().map(|c| c + 1).collect()).canonical_by_size()
}

/// Neighbor lists of the τ-graph restricted to `indices` (local numbering).
fn local_adjacency(points: &[Vec3], tau: f64) -> Vec<Vec<usize>> {
    let grid = SpatialGrid::new(points, tau);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut nb = Vec::new();
            grid.for_each_near(p, |j| {
                if j != i && (points[j] - p).norm() <= tau {
                    nb.push(j);
                }
            });
            nb.sort_unstable();
            nb
        })
        .collect()
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    idx: usize,
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // Min-heap on distance, then index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.idx.cmp(&self.idx))
    }
}

const FRAGMENT_RETRIES: usize = 32;

/// Splits the τ-connected point set `indices` (into `cs`) into τ-connected
/// fragments whose sizes are exactly `target_sizes`.
///
/// Every fragment except the largest is grown from the deepest node of a
/// BFS tree rooted at a random point, absorbing τ-neighbors nearest to the
/// seed first but only once their whole subtree is claimed; the largest
/// fragment is whatever remains. Stuck attempts are retried with a new root.
pub fn fragment_cluster(
    cs: &CorrespondenceSet,
    indices: &[usize],
    tau: f64,
    target_sizes: &[usize],
    seed: RngSeed,
) -> Result<Vec<Vec<usize>>> {
    let total: usize = target_sizes.iter().sum();
    if total != indices.len() {
        return Err(Error::Fragmentation(format!(
            "target sizes sum to {total}, expected {}",
            indices.len()
        )));
    }
    if target_sizes.contains(&0) {
        return Err(Error::Fragmentation("zero-size fragment requested".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if target_sizes.len() <= 1 {
        return Ok(vec![indices.to_vec()]);
    }
    let points: Vec<Vec3> = indices.iter().map(|&i| cs[i].a).collect();
    let adjacency = local_adjacency(&points, tau);
    let largest = (0..target_sizes.len())
        .max_by(|&x, &y| target_sizes[x].cmp(&target_sizes[y]).then(y.cmp(&x)))
        .expect("nonempty targets");

    let mut rng = seed.rng();
    for _ in 0..FRAGMENT_RETRIES {
        if let Some(local) = try_fragment(&points, &adjacency, target_sizes, largest, tau, &mut rng)
        {
            return Ok(local
                .into_iter()
                .map(|f| f.into_iter().map(|i| indices[i]).collect())
                .collect());
        }
    }
    Err(Error::Fragmentation(format!(
        "no connected split into sizes {target_sizes:?} after {FRAGMENT_RETRIES} attempts"
    )))
}

fn try_fragment<R: Rng>(
    points: &[Vec3],
    adjacency: &[Vec<usize>],
    targets: &[usize],
    largest: usize,
    tau: f64,
    rng: &mut R,
) -> Option<Vec<Vec<usize>>> {
    let n = points.len();
    // BFS tree from a random root that stays in the remainder. A node may be
    // claimed only once all its tree children are, so the unclaimed set is
    // always closed under tree ancestors and hence connected.
    let root = rng.random_range(0..n);
    let mut parent = vec![usize::MAX; n];
    let mut depth = vec![usize::MAX; n];
    let mut open_children = vec![0usize; n];
    let mut queue = std::collections::VecDeque::from([root]);
    depth[root] = 0;
    while let Some(v) = queue.pop_front() {
        for &w in &adjacency[v] {
            if depth[w] == usize::MAX {
                depth[w] = depth[v] + 1;
                parent[w] = v;
                open_children[v] += 1;
                queue.push_back(w);
            }
        }
    }
    if depth.contains(&usize::MAX) {
        return None;
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut fragments = vec![Vec::new(); targets.len()];
    for (f, &size) in targets.iter().enumerate() {
        if f == largest {
            continue;
        }
        let seed = (0..n)
            .filter(|&i| owner[i].is_none() && i != root)
            .max_by(|&x, &y| {
                depth[x]
                    .cmp(&depth[y])
                    .then(
                        (points[x] - points[root])
                            .norm_squared()
                            .total_cmp(&(points[y] - points[root]).norm_squared()),
                    )
                    .then(y.cmp(&x))
            })?;
        let mut heap = BinaryHeap::new();
        let mut touching = vec![false; n];
        let mut queued = vec![false; n];
        heap.push(Frontier {
            dist: 0.0,
            idx: seed,
        });
        queued[seed] = true;
        while fragments[f].len() < size {
            let Frontier { idx, .. } = heap.pop()?;
            owner[idx] = Some(f);
            fragments[f].push(idx);
            let mut wake = Vec::new();
            if parent[idx] != usize::MAX {
                let p = parent[idx];
                open_children[p] -= 1;
                wake.push(p);
            }
            for &j in &adjacency[idx] {
                touching[j] = true;
                wake.push(j);
            }
            for j in wake {
                if touching[j]
                    && !queued[j]
                    && owner[j].is_none()
                    && open_children[j] == 0
                    && j != root
                {
                    queued[j] = true;
                    heap.push(Frontier {
                        dist: (points[j] - points[seed]).norm(),
                        idx: j,
                    });
                }
            }
        }
    }
    fragments[largest] = (0..n).filter(|&i| owner[i].is_none()).collect();
    let rest: Vec<Vec3> = fragments[largest].iter().map(|&i| points[i]).collect();
    if !is_tau_connected(&rest, tau) {
        return None;
    }
    for frag in &mut fragments {
        frag.sort_unstable();
    }
    Some(fragments)
}

/// Outcome of checking the three goodness conditions of an initial clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessReport {
    /// Per cluster: is it τ-connected.
    pub connected: Vec<bool>,
    /// Per cluster size.
    pub sizes: Vec<usize>,
    /// Per cluster: size ≥ m₀.
    pub large_enough: Vec<bool>,
    /// Per cluster: contained in a single ground-truth part or in the outlier set.
    pub pure: Vec<bool>,
    /// Per ground-truth object: |H*| / max other intersecting cluster size
    /// (`+∞` when only one cluster intersects the object, 0 when none does).
    pub measured_alpha: Vec<f64>,
    /// Per ground-truth object: the identifying-cluster condition holds.
    pub identifying: Vec<bool>,
    /// Non-outlier points left unassigned.
    pub unassigned_inliers: usize,
    pub pass: bool,
}

/// Checks τ-connectivity, the size floor `m0`, the identifying-cluster
/// ratio `alpha`, and that each cluster sits inside a single ground-truth
/// part (or only holds outliers).
pub fn check_goodness(
    clustering: &Clustering,
    scene: &LabeledScene,
    alpha: f64,
    m0: usize,
) -> GoodnessReport {
    let cs = &scene.correspondences;
    let tau = scene.spec.tau;
    let truth = &scene.true_labels;
    let members = clustering.members();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let connected: Vec<bool> = members
        .iter()
        .map(|m| is_tau_connected(&m.iter().map(|&i| cs[i].a).collect::<Vec<_>>(), tau))
        .collect();
    let large_enough: Vec<bool> = sizes.iter().map(|&s| s >= m0).collect();
    let pure: Vec<bool> = members
        .iter()
        .map(|m| m.iter().all(|&i| truth[i] == truth[m[0]]))
        .collect();

    let num_objects = scene.true_transforms.len();
    let mut intersecting: Vec<Vec<usize>> = vec![Vec::new(); num_objects];
    for (c, m) in members.iter().enumerate() {
        let mut hit = vec![false; num_objects];
        for &i in m {
            if truth[i] != UNASSIGNED {
                hit[truth[i] - 1] = true;
            }
        }
        for (g, h) in hit.into_iter().enumerate() {
            if h {
                intersecting[g].push(c);
            }
        }
    }
    let measured_alpha: Vec<f64> = intersecting
        .iter()
        .map(|cl| {
            let mut s: Vec<usize> = cl.iter().map(|&c| sizes[c]).collect();
            s.sort_unstable_by(|a, b| b.cmp(a));
            match s.len() {
                0 => 0.0,
                1 => f64::INFINITY,
                _ => s[0] as f64 / s[1] as f64,
            }
        })
        .collect();
    let identifying: Vec<bool> = measured_alpha.iter().map(|&a| a > alpha).collect();
    let unassigned_inliers = clustering
        .labels()
        .iter()
        .zip(truth)
        .filter(|(&l, &t)| l == UNASSIGNED && t != UNASSIGNED)
        .count();
    let pass = connected.iter().all(|&b| b)
        && large_enough.iter().all(|&b| b)
        && pure.iter().all(|&b| b)
        && identifying.iter().all(|&b| b)
        && unassigned_inliers == 0;
    GoodnessReport {
        connected,
        sizes,
        large_enough,
        pure,
        measured_alpha,
        identifying,
        unassigned_inliers,
        pass,
    }
}
