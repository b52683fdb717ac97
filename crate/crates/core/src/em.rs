//! Classification EM over rigid motions.
//!
//! Each iteration prunes clusters below `m_min`, fits every surviving
//! cluster with Horn's method, scores every correspondence against every
//! cluster with the weighted likelihood gated by `d_cluster < τ`, and
//! hard-assigns each correspondence to its best-scoring cluster. Clusters
//! are never created, so K only shrinks.

use crate::clustering::{Clustering, SpatialGrid, UNASSIGNED};
use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, RigidTransform};
use crate::horn::{horn_register_subset, SIGMA_FLOOR};

/// How ties in the classification step are broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// The lowest cluster id wins.
    #[default]
    LowestId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Connectivity radius of the `d_cluster` gate.
    pub tau: f64,
    /// Clusters smaller than this are dissolved before fitting.
    pub m_min: usize,
    pub max_iters: usize,
    pub sigma_floor: f64,
    pub tie_break: TieBreak,
}

impl EmConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.m_min < 3 {
            return Err(Error::InvalidParameter(format!(
                "m_min must be at least 3, got {}",
                self.m_min
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidParameter(
                "sigma_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            m_min: 10,
            max_iters: 100,
            sigma_floor: SIGMA_FLOOR,
            tie_break: TieBreak::LowestId,
        }
    }
}

/// Per-cluster parameters of the E-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterModel {
    pub transform: RigidTransform,
    pub sigma_hat: f64,
    /// Mixing weight π_j.
    pub weight: f64,
}

/// One EM iteration as seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub sizes: Vec<usize>,
    pub weights: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub changes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    pub clustering: Clustering,
    /// Model of cluster `j + 1` at index `j`.
    pub models: Vec<ClusterModel>,
    pub iterations_run: usize,
    pub converged: bool,
    pub trace: Vec<IterationTrace>,
}

impl EmResult {
    pub fn changes_per_iteration(&self) -> Vec<usize> {
        self.trace.iter().map(|t| t.changes).collect()
    }
}

/// Fits every cluster with Horn's method; π_j is the cluster's share of all
/// assigned points.
pub fn fit_models(
    cs: &CorrespondenceSet,
    clustering: &Clustering,
    cfg: &EmConfig,
) -> Result<Vec<ClusterModel>> {
    let members = clustering.members();
    if let Some((j, m)) = members.iter().enumerate().find(|(_, m)| m.len() < 3) {
        return Err(Error::ClusterTooSmall {
            cluster: j + 1,
            size: m.len(),
        });
    }
    let assigned: usize = members.iter().map(Vec::len).sum();
    members
        .iter()
        .map(|m| {
            let est = horn_register_subset(cs, m)?;
            Ok(ClusterModel {
                transform: est.transform,
                sigma_hat: est.sigma_hat.max(cfg.sigma_floor),
                weight: m.len() as f64 / assigned as f64,
            })
        })
        .collect()
}

/// The n × K matrix of gated posterior weights.
///
/// Stored in log form: `log_score[i][j] = ln π_j + ln φ_j(b_i | a_i)` (up to
/// the shared Gaussian constant), the per-row log of the full denominator,
/// and the gate. A weight is `exp(log_score − log_denom)` where the gate
/// passes and 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    log_score: Vec<f64>,
    log_denom: Vec<f64>,
    gate: Vec<bool>,
}

impl WeightMatrix {
    /// Wraps explicit weights; nonpositive entries are treated as gated out.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut log_score = Vec::with_capacity(rows.len() * cols);
        let mut gate = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged weight rows");
            for &w in r {
                gate.push(w > 0.0);
                log_score.push(if w > 0.0 { w.ln() } else { f64::NEG_INFINITY });
            }
        }
        Self {
            rows: rows.len(),
            cols,
            log_score,
            log_denom: vec![0.0; rows.len()],
            gate,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// W_{i,j}; `j` is 0-based (cluster `j + 1`).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let k = i * self.cols + j;
        if self.gate[k] {
            (self.log_score[k] - self.log_denom[i]).exp()
        } else {
            0.0
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.cols).map(|j| self.get(i, j)).sum()
    }

    /// Best gated cluster of row `i` (0-based), lowest index on ties.
    /// Compared in log space so that underflowing weights still rank.
    pub fn argmax(&self, i: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            let k = i * self.cols + j;
            if !self.gate[k] {
                continue;
            }
            let s = self.log_score[k];
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((j, s)),
            }
        }
        best.map(|(j, _)| j)
    }
}

/// Which clusters pass the `d_cluster(H_j, a_i) < τ` gate, per point, using
/// the memberships of `clustering`.
pub fn cluster_gate(cs: &CorrespondenceSet, clustering: &Clustering, tau: f64) -> Vec<Vec<bool>> {
    let k = clustering.num_clusters();
    let a = cs.a_points();
    let grid = SpatialGrid::new(&a, tau);
    a.iter()
        .map(|p| {
            let mut pass = vec![false; k];
            grid.for_each_near(p, |q| {
                let l = clustering.label(q);
                if l != UNASSIGNED && !pass[l - 1] && (a[q] - p).norm() < tau {
                    pass[l - 1] = true;
                }
            });
            pass
        })
        .collect()
}

/// Weighted likelihood of every correspondence under every cluster model,
/// normalized over all clusters and then gated by `d_cluster < τ`.
///
/// φ_j is the isotropic Gaussian with covariance σ̂_j² I₃, so the
/// unnormalized log score is `ln π_j − 3 ln σ̂_j − ‖r‖² / (2σ̂_j²)`.
pub fn e_step(
    cs: &CorrespondenceSet,
    clustering: &Clustering,
    models: &[ClusterModel],
    cfg: &EmConfig,
) -> WeightMatrix {
    let k = models.len();
    let gate = cluster_gate(cs, clustering, cfg.tau);
    let mut log_score = Vec::with_capacity(cs.len() * k);
    let mut log_denom = Vec::with_capacity(cs.len());
    for c in cs {
        let start = log_score.len();
        for m in models {
            let s = m.sigma_hat.max(cfg.sigma_floor);
            let r2 = m.transform.residual(c).norm_squared();
            log_score.push(m.weight.ln() - 3.0 * s.ln() - r2 / (2.0 * s * s));
        }
        let row = &log_score[start..];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom = if max.is_finite() {
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        } else {
            max
        };
        log_denom.push(denom);
    }
    WeightMatrix {
        rows: cs.len(),
        cols: k,
        log_score,
        log_denom,
        gate: gate.into_iter().flatten().collect(),
    }
}

/// Classification step: each row goes to its best gated cluster; rows with
/// no gated cluster keep their previous label (which may be 0).
pub fn m_step(w: &WeightMatrix, previous: &Clustering, cfg: &EmConfig) -> Clustering {
    Clustering::from_labels(classify(w, previous, cfg))
}

/// Raw classification labels in `previous`'s id space.
fn classify(w: &WeightMatrix, previous: &Clustering, cfg: &EmConfig) -> Vec<usize> {
    match cfg.tie_break {
        TieBreak::LowestId => (0..w.rows())
            .map(|i| w.argmax(i).map_or(previous.label(i), |j| j + 1))
            .collect(),
    }
}

/// Dissolves clusters smaller than `m_min`; their points become unassigned.
pub fn prune_small(clustering: &Clustering, cfg: &EmConfig) -> Clustering {
    let sizes = clustering.sizes();
    let labels = clustering
        .labels()
        .iter()
        .map(|&l| {
            if l != UNASSIGNED && sizes[l - 1] < cfg.m_min {
                UNASSIGNED
            } else {
                l
            }
        })
        .collect();
    Clustering::from_labels(labels)
}

/// Runs prune → fit → E-step → M-step until no assignment changes or
/// `max_iters` is reached.
pub fn run_em(cs: &CorrespondenceSet, initial: &Clustering, cfg: &EmConfig) -> Result<EmResult> {
    cfg.validate()?;
    if initial.len() != cs.len() {
        return Err(Error::LengthMismatch {
            left: initial.len(),
            right: cs.len(),
        });
    }
    let mut current = Clustering::from_labels(initial.labels().to_vec());
    let mut trace = Vec::new();
    for iteration in 1..=cfg.max_iters {
        let pruned = prune_small(&current, cfg);
        if pruned.num_clusters() == 0 {
            return Err(Error::NoViableClusters);
        }
        let models = fit_models(cs, &pruned, cfg)?;
        let w = e_step(cs, &pruned, &models, cfg);
        let raw = classify(&w, &pruned, cfg);
        let changes = raw
            .iter()
            .zip(pruned.labels())
            .filter(|(a, b)| a != b)
            .count();
        trace.push(IterationTrace {
            iteration,
            sizes: pruned.sizes(),
            weights: models.iter().map(|m| m.weight).collect(),
            sigmas: models.iter().map(|m| m.sigma_hat).collect(),
            changes,
        });
        if changes == 0 {
            return Ok(EmResult {
                clustering: pruned,
                models,
                iterations_run: iteration,
                converged: true,
                trace,
            });
        }
        current = Clustering::from_labels(raw);
    }
    let clustering = prune_small(&current, cfg);
    if clustering.num_clusters() == 0 {
        return Err(Error::NoViableClusters);
    }
    let models = fit_models(cs, &clustering, cfg)?;
    Ok(EmResult {
        clustering,
        models,
        iterations_run: cfg.max_iters,
        converged: false,
        trace,
    })
}
