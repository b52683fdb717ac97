use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use multireg::formats::KvDocument;
use multireg::geometry::RngSeed;
use multireg::scene::SceneSpec;

use crate::CliError;

/// Every recognised key with its default, in canonical order. `auto`
/// values are resolved against the scene at run time.
/// Upper limit on `scene.M`; larger packings are never feasible.
pub const MAX_OBJECTS: usize = 1 << 16;

pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("scene.M", "3"),
    ("scene.points_per_object", "200"),
    ("scene.sigma", "0.001"),
    ("scene.tau", "0.05"),
    ("scene.B", "1"),
    ("scene.num_outliers", "0"),
    ("scene.separation_margin", "auto"),
    ("scene.file", ""),
    ("algorithm", "em"),
    ("init", "euclidean"),
    ("init.file", ""),
    ("init.alpha", "2"),
    ("init.fragments", "3"),
    ("em.tau", "auto"),
    ("em.m_min", "10"),
    ("em.max_iters", "100"),
    ("ransac.threshold", "auto"),
    ("ransac.max_trials", "500"),
    ("ransac.min_inliers", "10"),
    ("tlinkage.tau_t", "auto"),
    ("tlinkage.tau", "auto"),
    ("tlinkage.hypotheses", "200"),
    ("bench.suite", "consistency"),
    ("bench.ms", "100,1000,10000"),
    ("bench.sigma", "0.1"),
    ("bench.B", "1"),
    ("bench.delta", "0.05"),
    ("bench.trials", "200"),
    ("record_timings", "false"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Em,
    Sransac,
    TLinkage,
    NaiveHorn,
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "em" => Ok(Self::Em),
            "sransac" => Ok(Self::Sransac),
            "tlinkage" => Ok(Self::TLinkage),
            "naive-horn" | "naive-horn-per-cluster" => Ok(Self::NaiveHorn),
            _ => Err(format!(
                "unknown algorithm {s:?} (expected em, sransac, tlinkage or naive-horn)"
            )),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Em => "em",
            Self::Sransac => "sransac",
            Self::TLinkage => "tlinkage",
            Self::NaiveHorn => "naive-horn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Euclidean,
    GoodSplit,
    FromFile,
    /// Ground-truth labels of the scene.
    Truth,
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "good-split" => Ok(Self::GoodSplit),
            "from-file" => Ok(Self::FromFile),
            "truth" => Ok(Self::Truth),
            _ => Err(format!(
                "unknown init {s:?} (expected euclidean, good-split, from-file or truth)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchSuite {
    Consistency,
    SigmaRatio,
    Hoeffding,
}

impl FromStr for BenchSuite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "consistency" => Ok(Self::Consistency),
            "sigma-ratio" => Ok(Self::SigmaRatio),
            "hoeffding" => Ok(Self::Hoeffding),
            _ => Err(format!(
                "unknown bench suite {s:?} (expected consistency, sigma-ratio or hoeffding)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub suite: BenchSuite,
    pub ms: Vec<usize>,
    pub sigma: f64,
    pub bound: f64,
    pub delta: f64,
    pub trials: usize,
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub scene_file: Option<PathBuf>,
    pub algorithm: Algorithm,
    pub init: InitKind,
    pub init_file: Option<PathBuf>,
    pub init_alpha: f64,
    pub init_fragments: usize,
    pub em_tau: Option<f64>,
    pub em_m_min: usize,
    pub em_max_iters: usize,
    pub ransac_threshold: Option<f64>,
    pub ransac_max_trials: usize,
    pub ransac_min_inliers: usize,
    pub tlinkage_tau_t: Option<f64>,
    pub tlinkage_tau: Option<f64>,
    pub tlinkage_hypotheses: usize,
    pub bench: BenchSettings,
    pub record_timings: bool,
    settings: KvDocument,
}

fn config_err(key: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn value<T: FromStr>(doc: &KvDocument, key: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    let raw = doc.get(key).unwrap_or_default();
    raw.parse()
        .map_err(|e| config_err(key, format!("{e} ({raw:?})")))
}

fn auto_f64(doc: &KvDocument, key: &str) -> Result<Option<f64>, CliError> {
    match doc.get(key).unwrap_or("auto") {
        "auto" => Ok(None),
        _ => value(doc, key).map(Some),
    }
}

fn path(doc: &KvDocument, key: &str) -> Option<PathBuf> {
    doc.get(key).filter(|s| !s.is_empty()).map(PathBuf::from)
}

fn list<T: FromStr>(doc: &KvDocument, key: &str) -> Result<Vec<T>, CliError>
where
    T::Err: fmt::Display,
{
    let raw = doc.get(key).unwrap_or_default();
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| config_err(key, format!("{e} ({s:?})")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Defaults, then the config file, then `--set` overrides in order.
    pub fn build(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut doc = KvDocument::new();
        for (k, v) in DEFAULTS {
            doc.set(*k, *v).expect("valid default");
        }
        let known = |k: &str| DEFAULTS.iter().any(|(d, _)| *d == k);
        if let Some(text) = file {
            let parsed = KvDocument::parse(text)
                .map_err(|e| CliError::Config(format!("config file: {e}")))?;
            for (k, v) in parsed.entries() {
                if !known(k) {
                    return Err(config_err(k, "unknown key"));
                }
                doc.set(k.clone(), v.clone())
                    .map_err(|e| config_err(k, e))?;
            }
        }
        for (k, v) in overrides {
            if !known(k) {
                return Err(config_err(k, "unknown key"));
            }
            doc.set(k.clone(), v.trim().to_string())
                .map_err(|e| config_err(k, e))?;
        }
        Self::from_settings(doc)
    }

    fn from_settings(doc: KvDocument) -> Result<Self, CliError> {
        let seed: u64 = value(&doc, "seed")?;
        let num_objects: usize = value(&doc, "scene.M")?;
        if num_objects > MAX_OBJECTS {
            return Err(config_err(
                "scene.M",
                format!("at most {MAX_OBJECTS} objects"),
            ));
        }
        let mut points_per_object: Vec<usize> = list(&doc, "scene.points_per_object")?;
        if points_per_object.len() == 1 {
            points_per_object = vec![points_per_object[0]; num_objects];
        }
        let tau: f64 = value(&doc, "scene.tau")?;
        let scene = SceneSpec {
            num_objects,
            points_per_object,
            sigma: value(&doc, "scene.sigma")?,
            tau,
            bound: value(&doc, "scene.B")?,
            num_outliers: value(&doc, "scene.num_outliers")?,
            separation_margin: auto_f64(&doc, "scene.separation_margin")?.unwrap_or(2.0 * tau),
            seed: RngSeed(seed),
        };
        let bench = BenchSettings {
            suite: value(&doc, "bench.suite")?,
            ms: list(&doc, "bench.ms")?,
            sigma: value(&doc, "bench.sigma")?,
            bound: value(&doc, "bench.B")?,
            delta: value(&doc, "bench.delta")?,
            trials: value(&doc, "bench.trials")?,
        };
        let cfg = Self {
            seed,
            scene,
            scene_file: path(&doc, "scene.file"),
            algorithm: value(&doc, "algorithm")?,
            init: value(&doc, "init")?,
            init_file: path(&doc, "init.file"),
            init_alpha: value(&doc, "init.alpha")?,
            init_fragments: value(&doc, "init.fragments")?,
            em_tau: auto_f64(&doc, "em.tau")?,
            em_m_min: value(&doc, "em.m_min")?,
            em_max_iters: value(&doc, "em.max_iters")?,
            ransac_threshold: auto_f64(&doc, "ransac.threshold")?,
            ransac_max_trials: value(&doc, "ransac.max_trials")?,
            ransac_min_inliers: value(&doc, "ransac.min_inliers")?,
            tlinkage_tau_t: auto_f64(&doc, "tlinkage.tau_t")?,
            tlinkage_tau: auto_f64(&doc, "tlinkage.tau")?,
            tlinkage_hypotheses: value(&doc, "tlinkage.hypotheses")?,
            bench,
            record_timings: value(&doc, "record_timings")?,
            settings: doc,
        };
        if cfg.init == InitKind::FromFile && cfg.init_file.is_none() {
            return Err(config_err("init.file", "required when init = from-file"));
        }
        Ok(cfg)
    }

    /// Effective settings in canonical key order.
    pub fn settings(&self) -> &KvDocument {
        &self.settings
    }

    /// Replaces one key and re-validates.
    pub fn with(&self, key: &str, val: &str) -> Result<Self, CliError> {
        let mut doc = self.settings.clone();
        if !DEFAULTS.iter().any(|(d, _)| *d == key) {
            return Err(config_err(key, "unknown key"));
        }
        doc.set(key, val).map_err(|e| config_err(key, e))?;
        Self::from_settings(doc)
    }

    /// Hex SHA-256 of the rendered effective settings.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.settings.render().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Splits a `--set` argument of the form `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}
