//! Closed-form error bounds and sample-size thresholds for Horn registration
//! and the EM loop, plus Monte-Carlo benches that check them empirically.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    random_in_ball, random_in_cube, random_transform, Correspondence, CorrespondenceSet, RngSeed,
    Vec3,
};
use crate::horn::{estimate_noise_std, horn_register};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn probability(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )))
    }
}

/// Bound on ‖R̂ − R‖_F²: (18Bσ/λ_min)·√((2/m)·ln(18/δ)). Infinite when
/// λ_min = 0.
pub fn rot_bound(m: f64, sigma: f64, bound: f64, delta: f64, lambda_min: f64) -> Result<f64> {
    positive("m", m)?;
    probability(delta)?;
    if !(sigma >= 0.0 && bound >= 0.0 && lambda_min >= 0.0) {
        return Err(Error::InvalidParameter(
            "sigma, B and lambda_min must be nonnegative".into(),
        ));
    }
    if lambda_min == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(18.0 * bound * sigma / lambda_min * (2.0 / m * (18.0 / delta).ln()).sqrt())
}

/// Bound on ‖t̂ − t‖²: 36Bσ·√((2/m)·ln(18/δ)) + (12/m)·σ²·ln(6/δ).
pub fn trans_bound(m: f64, sigma: f64, bound: f64, delta: f64) -> Result<f64> {
    positive("m", m)?;
    probability(delta)?;
    if !(sigma >= 0.0 && bound >= 0.0) {
        return Err(Error::InvalidParameter(
            "sigma and B must be nonnegative".into(),
        ));
    }
    Ok(
        36.0 * bound * sigma * (2.0 / m * (18.0 / delta).ln()).sqrt()
            + 12.0 / m * sigma * sigma * (6.0 / delta).ln(),
    )
}

/// Union-bound Hoeffding deviation a·k·√((2/n)·ln(2k/δ)) for `k` means of
/// `n` variables bounded by `a` in absolute value.
pub fn hoeffding_bound(n: f64, a: f64, delta: f64, k: f64) -> Result<f64> {
    positive("n", n)?;
    positive("a", a)?;
    positive("k", k)?;
    probability(delta)?;
    Ok(a * k * (2.0 / n * (2.0 * k / delta).ln()).sqrt())
}

/// Smallest α the EM argument admits for slack `c`: 8·exp(2(√3 + c)²).
pub fn alpha_threshold(c: f64) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "c must be nonnegative, got {c}"
        )));
    }
    let s = 3f64.sqrt() + c;
    Ok(8.0 * (2.0 * s * s).exp())
}

/// Inverse of [`alpha_threshold`]: √(½·ln(α/8)) − √3.
pub fn c_from_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 8.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "alpha must exceed 8, got {alpha}"
        )));
    }
    Ok((0.5 * (alpha / 8.0).ln()).sqrt() - 3f64.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremInputs {
    pub alpha: f64,
    pub delta: f64,
    pub bound: f64,
    pub lambda: f64,
    pub sigma: f64,
}

/// The two published forms of the minimum cluster size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M0Variant {
    /// 2.5·10⁴·ln(18/δ)·max{B⁴/λ², B², σ}·(½·ln(α/8))^(−1/2); needs α > 8e⁶.
    A,
    /// 2.5·10⁸·((α+1)/(α−1))²·ln(18/δ)·max{B⁴/λ², B², σ}; needs α > 1.
    /// With `extra_floor` the max also includes 0.1.
    B { extra_floor: bool },
}

pub fn m0_threshold(inputs: &TheoremInputs, variant: M0Variant) -> Result<f64> {
    let TheoremInputs {
        alpha,
        delta,
        bound,
        lambda,
        sigma,
    } = *inputs;
    probability(delta)?;
    positive("B", bound)?;
    positive("lambda", lambda)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    let mut scale = (bound.powi(4) / (lambda * lambda))
        .max(bound * bound)
        .max(sigma);
    let log_term = (18.0 / delta).ln();
    match variant {
        M0Variant::A => {
            let floor = alpha_threshold(0.0)?;
            if !(alpha > floor) {
                return Err(Error::InvalidParameter(format!(
                    "variant A needs alpha > 8e^6 = {floor}, got {alpha}"
                )));
            }
            Ok(2.5e4 * log_term * scale * (0.5 * (alpha / 8.0).ln()).powf(-0.5))
        }
        M0Variant::B { extra_floor } => {
            if !(alpha > 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "variant B needs alpha > 1, got {alpha}"
                )));
            }
            if extra_floor {
                scale = scale.max(0.1);
            }
            let ratio = (alpha + 1.0) / (alpha - 1.0);
            Ok(2.5e8 * ratio * ratio * log_term * scale)
        }
    }
}

/// One single-object registration compared against its error bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTrial {
    pub m: usize,
    pub sigma: f64,
    pub bound: f64,
    pub delta: f64,
    pub lambda_min: f64,
    pub measured_rot_err_sq: f64,
    pub measured_trans_err_sq: f64,
    pub rot_bound: f64,
    pub trans_bound: f64,
    pub violated_rot: bool,
    pub violated_trans: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfig {
    pub ms: Vec<usize>,
    pub sigma: f64,
    pub bound: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: RngSeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencySummary {
    pub m: usize,
    pub trials: usize,
    pub rot_violation_rate: f64,
    pub trans_violation_rate: f64,
    pub median_rot_err_sq: f64,
    pub median_trans_err_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyBench {
    pub trials: Vec<BoundTrial>,
    pub summary: Vec<ConsistencySummary>,
}

impl ConsistencyBench {
    pub fn summary_for(&self, m: usize) -> Option<&ConsistencySummary> {
        self.summary.iter().find(|s| s.m == m)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn consistency_trial<R: Rng>(
    rng: &mut R,
    m: usize,
    sigma: f64,
    bound: f64,
    delta: f64,
) -> Result<BoundTrial> {
    let truth = random_transform(rng, bound);
    let items: Vec<Correspondence> = (0..m)
        .map(|_| {
            let a = random_in_ball(rng, bound);
            let b = truth.apply(&a) + random_in_cube(rng, sigma);
            Correspondence::new(a, b)
        })
        .collect();
    let est = horn_register(&CorrespondenceSet::new(items)?)?;
    let rot_err = (est.transform.rotation.matrix() - truth.rotation.matrix()).norm_squared();
    let trans_err = (est.transform.translation - truth.translation).norm_squared();
    let rb = rot_bound(m as f64, sigma, bound, delta, est.lambda_min)?;
    let tb = trans_bound(m as f64, sigma, bound, delta)?;
    Ok(BoundTrial {
        m,
        sigma,
        bound,
        delta,
        lambda_min: est.lambda_min,
        measured_rot_err_sq: rot_err,
        measured_trans_err_sq: trans_err,
        rot_bound: rb,
        trans_bound: tb,
        violated_rot: rot_err > rb,
        violated_trans: trans_err > tb,
    })
}

/// Registers `trials` random single-object scenes per sample count and
/// compares the errors with [`rot_bound`] and [`trans_bound`]. Trial `t`
/// at grid position `g` draws from stream `g * trials + t`.
pub fn run_consistency_bench(cfg: &ConsistencyConfig) -> Result<ConsistencyBench> {
    probability(cfg.delta)?;
    positive("B", cfg.bound)?;
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be nonnegative, got {}",
            cfg.sigma
        )));
    }
    if cfg.trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    if let Some(&m) = cfg.ms.iter().find(|&&m| m < 3) {
        return Err(Error::Underdetermined(m));
    }
    let mut trials = Vec::with_capacity(cfg.ms.len() * cfg.trials);
    let mut summary = Vec::with_capacity(cfg.ms.len());
    for (g, &m) in cfg.ms.iter().enumerate() {
        let start = trials.len();
        for t in 0..cfg.trials {
            let mut rng = cfg.seed.stream((g * cfg.trials + t) as u64);
            trials.push(consistency_trial(
                &mut rng, m, cfg.sigma, cfg.bound, cfg.delta,
            )?);
        }
        let block = &trials[start..];
        let n = block.len() as f64;
        let rot: Vec<f64> = block.iter().map(|t| t.measured_rot_err_sq).collect();
        let trans: Vec<f64> = block.iter().map(|t| t.measured_trans_err_sq).collect();
        summary.push(ConsistencySummary {
            m,
            trials: block.len(),
            rot_violation_rate: block.iter().filter(|t| t.violated_rot).count() as f64 / n,
            trans_violation_rate: block.iter().filter(|t| t.violated_trans).count() as f64 / n,
            median_rot_err_sq: median(&rot),
            median_trans_err_sq: median(&trans),
        });
    }
    Ok(ConsistencyBench { trials, summary })
}

/// Smallest sample count for which the σ-ratio interval is claimed.
pub fn sigma_ratio_min_samples(delta: f64) -> f64 {
    2.0e3 * (2.0 / delta).ln()
}

/// The interval 1/√3 ± 2·((2/(3m))·ln(2/δ))^(1/4) for σ̂/σ.
pub fn sigma_ratio_interval(m: f64, delta: f64) -> Result<(f64, f64)> {
    probability(delta)?;
    positive("m", m)?;
    let half = 2.0 * (2.0 / (3.0 * m) * (2.0 / delta).ln()).powf(0.25);
    let centre = 1.0 / 3f64.sqrt();
    Ok((centre - half, centre + half))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRatioConfig {
    pub ms: Vec<usize>,
    pub sigma: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: RngSeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRatioSummary {
    pub m: usize,
    pub lower: f64,
    pub upper: f64,
    /// σ̂/σ for every trial.
    pub ratios: Vec<f64>,
    pub violations: usize,
    pub violation_rate: f64,
}

impl SigmaRatioSummary {
    /// Trials whose ratio lies within `tol` of 1/√3.
    pub fn within(&self, tol: f64) -> usize {
        let centre = 1.0 / 3f64.sqrt();
        self.ratios
            .iter()
            .filter(|r| (*r - centre).abs() <= tol)
            .count()
    }
}

/// Draws `m` noise vectors uniform in [−σ, σ]³ per trial and checks the
/// σ-ratio interval on the pooled per-axis standard deviation.
pub fn run_sigma_ratio_bench(cfg: &SigmaRatioConfig) -> Result<Vec<SigmaRatioSummary>> {
    probability(cfg.delta)?;
    positive("sigma", cfg.sigma)?;
    let floor = sigma_ratio_min_samples(cfg.delta);
    let mut out = Vec::with_capacity(cfg.ms.len());
    for (g, &m) in cfg.ms.iter().enumerate() {
        if (m as f64) < floor {
            return Err(Error::InvalidParameter(format!(
                "m = {m} is below the validity floor 2000*ln(2/delta) = {floor:.1}"
            )));
        }
        let (lower, upper) = sigma_ratio_interval(m as f64, cfg.delta)?;
        let mut ratios = Vec::with_capacity(cfg.trials);
        for t in 0..cfg.trials {
            let mut rng = cfg.seed.stream((g * cfg.trials + t) as u64);
            let noise: Vec<Vec3> = (0..m)
                .map(|_| random_in_cube(&mut rng, cfg.sigma))
                .collect();
            ratios.push(estimate_noise_std(&noise)? / cfg.sigma);
        }
        let violations = ratios.iter().filter(|&&r| r < lower || r > upper).count();
        out.push(SigmaRatioSummary {
            m,
            lower,
            upper,
            violation_rate: violations as f64 / cfg.trials.max(1) as f64,
            violations,
            ratios,
        });
    }
    Ok(out)
}

/// Fraction of trials in which the mean of `n` draws from U[−a, a]
/// deviates from 0 by more than the k = 1 Hoeffding bound.
pub fn hoeffding_violation_rate(
    n: usize,
    a: f64,
    delta: f64,
    trials: usize,
    seed: RngSeed,
) -> Result<f64> {
    let bound = hoeffding_bound(n as f64, a, delta, 1.0)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let mut violations = 0usize;
    for t in 0..trials {
        let mut rng = seed.stream(t as u64);
        let mean = (0..n).map(|_| rng.random_range(-a..=a)).sum::<f64>() / n as f64;
        if mean.abs() > bound {
            violations += 1;
        }
    }
    Ok(violations as f64 / trials as f64)
}
