use std::fmt::Display;
use std::str::FromStr;

use multireg::formats::{fmt_f64, KvDocument};
use multireg::geometry::{RigidTransform, RotationMatrix, Vec3};
use multireg::metrics::EvalReport;

use crate::CliError;

pub const TOOL_NAME: &str = "multireg";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub transform: RigidTransform,
    pub sigma_hat: Option<f64>,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub point_error: f64,
    pub point_error_per_point: f64,
    pub rotation_error: f64,
    pub translation_error: f64,
    pub mask_iou: f64,
    pub per_object_point_error: Vec<f64>,
    pub per_cluster_iou: Vec<f64>,
    /// Cluster ids with a pose score, and their errors.
    pub pose_clusters: Vec<usize>,
    pub per_cluster_rotation_error: Vec<f64>,
    pub per_cluster_translation_error: Vec<f64>,
}

impl From<&EvalReport> for MetricsRecord {
    fn from(r: &EvalReport) -> Self {
        Self {
            point_error: r.point_error,
            point_error_per_point: r.point.point_mean,
            rotation_error: r.rotation_error,
            translation_error: r.translation_error,
            mask_iou: r.mask_iou,
            per_object_point_error: r.point.per_object.clone(),
            per_cluster_iou: r.iou_per_cluster.clone(),
            pose_clusters: r.pose.per_cluster.iter().map(|p| p.cluster).collect(),
            per_cluster_rotation_error: r
                .pose
                .per_cluster
                .iter()
                .map(|p| p.rotation_error)
                .collect(),
            per_cluster_translation_error: r
                .pose
                .per_cluster
                .iter()
                .map(|p| p.translation_error)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iterations: usize,
    pub converged: bool,
    pub changes: Vec<usize>,
    /// Cluster sizes after each iteration.
    pub sizes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub labels: Vec<usize>,
    pub num_clusters: usize,
    pub models: Vec<ModelRecord>,
    pub metrics: MetricsRecord,
    pub trace: Option<TraceRecord>,
}

/// Everything a `run` leaves behind, serialised as flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub tool_version: String,
    pub config_hash: String,
    pub config: KvDocument,
    pub outcome: Result<RunOutput, String>,
    pub elapsed_ms: Option<f64>,
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn floats(v: &[f64]) -> String {
    join(v, |x| fmt_f64(*x))
}

fn ints(v: &[usize]) -> String {
    join(v, usize::to_string)
}

struct Writer(KvDocument);

impl Writer {
    fn put(&mut self, k: impl Into<String>, v: impl Into<String>) {
        self.0.set(k, v).expect("well-formed record entry");
    }
}

impl ResultRecord {
    pub fn to_kv(&self) -> KvDocument {
        let mut w = Writer(KvDocument::new());
        w.put("tool.name", TOOL_NAME);
        w.put("tool.version", self.tool_version.as_str());
        w.put("config.hash", self.config_hash.as_str());
        for (k, v) in self.config.entries() {
            w.put(format!("config.{k}"), v.as_str());
        }
        match &self.outcome {
            Err(msg) => {
                w.put("status", "failed");
                w.put("error", msg.replace(['\n', '\r'], " ").trim());
            }
            Ok(out) => {
                w.put("status", "ok");
                w.put("prediction.num_clusters", out.num_clusters.to_string());
                w.put("prediction.labels", ints(&out.labels));
                w.put("models.count", out.models.len().to_string());
                for (j, m) in out.models.iter().enumerate() {
                    let p = format!("models.{}", j + 1);
                    w.put(
                        format!("{p}.rotation"),
                        floats(&m.transform.rotation.to_row_array()),
                    );
                    w.put(
                        format!("{p}.translation"),
                        floats(m.transform.translation.as_slice()),
                    );
                    if let Some(s) = m.sigma_hat {
                        w.put(format!("{p}.sigma_hat"), fmt_f64(s));
                    }
                    if let Some(x) = m.weight {
                        w.put(format!("{p}.weight"), fmt_f64(x));
                    }
                }
                let mt = &out.metrics;
                w.put("metrics.point_error", fmt_f64(mt.point_error));
                w.put(
                    "metrics.point_error_per_point",
                    fmt_f64(mt.point_error_per_point),
                );
                w.put("metrics.rotation_error", fmt_f64(mt.rotation_error));
                w.put("metrics.translation_error", fmt_f64(mt.translation_error));
                w.put("metrics.mask_iou", fmt_f64(mt.mask_iou));
                w.put(
                    "metrics.per_object.point_error",
                    floats(&mt.per_object_point_error),
                );
                w.put("metrics.per_cluster.iou", floats(&mt.per_cluster_iou));
                w.put("metrics.pose_clusters", ints(&mt.pose_clusters));
                w.put(
                    "metrics.per_cluster.rotation_error",
                    floats(&mt.per_cluster_rotation_error),
                );
                w.put(
                    "metrics.per_cluster.translation_error",
                    floats(&mt.per_cluster_translation_error),
                );
                if let Some(t) = &out.trace {
                    w.put("trace.iterations", t.iterations.to_string());
                    w.put("trace.converged", t.converged.to_string());
                    w.put("trace.changes", ints(&t.changes));
                    for (i, s) in t.sizes.iter().enumerate() {
                        w.put(format!("trace.{}.sizes", i + 1), ints(s));
                    }
                }
            }
        }
        if let Some(ms) = self.elapsed_ms {
            w.put("timing.total_ms", fmt_f64(ms));
        }
        w.0
    }

    pub fn render(&self) -> String {
        self.to_kv().render()
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let doc = KvDocument::parse(text).map_err(|e| CliError::Format(e.to_string()))?;
        Self::from_kv(&doc)
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self, CliError> {
        let r = Reader(doc);
        if r.str("tool.name")? != TOOL_NAME {
            return Err(CliError::Format("not a result record".into()));
        }
        let mut config = KvDocument::new();
        for (k, v) in doc.entries() {
            if let Some(key) = k.strip_prefix("config.") {
                if key != "hash" {
                    config
                        .set(key, v.as_str())
                        .map_err(|e| CliError::Format(e.to_string()))?;
                }
            }
        }
        let outcome = match r.str("status")? {
            "failed" => Err(r.str("error")?.to_string()),
            "ok" => Ok(r.output()?),
            other => return Err(CliError::Format(format!("unknown status {other:?}"))),
        };
        let record = Self {
            tool_version: r.str("tool.version")?.to_string(),
            config_hash: r.str("config.hash")?.to_string(),
            config,
            outcome,
            elapsed_ms: r.opt("timing.total_ms")?,
        };
        let mut expected: Vec<String> = record
            .to_kv()
            .entries()
            .iter()
            .map(|(k, _)| k.clone())
            .collect();
        let mut found: Vec<String> = doc.entries().iter().map(|(k, _)| k.clone()).collect();
        expected.sort_unstable();
        found.sort_unstable();
        if expected != found {
            return Err(CliError::Format(
                "unrecognised keys in result record".into(),
            ));
        }
        Ok(record)
    }
}

struct Reader<'a>(&'a KvDocument);

impl Reader<'_> {
    fn str(&self, key: &str) -> Result<&str, CliError> {
        self.0
            .get(key)
            .ok_or_else(|| CliError::Format(format!("missing key {key}")))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.str(key)?;
        raw.parse()
            .map_err(|e| CliError::Format(format!("{key}: {e}")))
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(_) => self.num(key).map(Some),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let raw = self.str(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Format(format!("{key}: {e}")))
            })
            .collect()
    }

    fn output(&self) -> Result<RunOutput, CliError> {
        let count: usize = self.num("models.count")?;
        if count > self.0.len() {
            return Err(CliError::Format(
                "models.count exceeds the record size".into(),
            ));
        }
        let mut models = Vec::with_capacity(count);
        for j in 1..=count {
            let p = format!("models.{j}");
            let rot: Vec<f64> = self.list(&format!("{p}.rotation"))?;
            let tr: Vec<f64> = self.list(&format!("{p}.translation"))?;
            let rows: [f64; 9] = rot
                .try_into()
                .map_err(|_| CliError::Format(format!("{p}.rotation needs 9 values")))?;
            if tr.len() != 3 {
                return Err(CliError::Format(format!("{p}.translation needs 3 values")));
            }
            let rotation = RotationMatrix::from_row_slice(&rows)
                .map_err(|e| CliError::Format(format!("{p}: {e}")))?;
            models.push(ModelRecord {
                transform: RigidTransform::new(rotation, Vec3::new(tr[0], tr[1], tr[2])),
                sigma_hat: self.opt(&format!("{p}.sigma_hat"))?,
                weight: self.opt(&format!("{p}.weight"))?,
            });
        }
        let metrics = MetricsRecord {
            point_error: self.num("metrics.point_error")?,
            point_error_per_point: self.num("metrics.point_error_per_point")?,
            rotation_error: self.num("metrics.rotation_error")?,
            translation_error: self.num("metrics.translation_error")?,
            mask_iou: self.num("metrics.mask_iou")?,
            per_object_point_error: self.list("metrics.per_object.point_error")?,
            per_cluster_iou: self.list("metrics.per_cluster.iou")?,
            pose_clusters: self.list("metrics.pose_clusters")?,
            per_cluster_rotation_error: self.list("metrics.per_cluster.rotation_error")?,
            per_cluster_translation_error: self.list("metrics.per_cluster.translation_error")?,
        };
        let trace = match self.opt::<usize>("trace.iterations")? {
            None => None,
            Some(iterations) => {
                if iterations > self.0.len() {
                    return Err(CliError::Format(
                        "trace.iterations exceeds the record size".into(),
                    ));
                }
                let mut sizes = Vec::with_capacity(iterations);
                for i in 1..=iterations {
                    sizes.push(self.list(&format!("trace.{i}.sizes"))?);
                }
                Some(TraceRecord {
                    iterations,
                    converged: self.num("trace.converged")?,
                    changes: self.list("trace.changes")?,
                    sizes,
                })
            }
        };
        Ok(RunOutput {
            labels: self.list("prediction.labels")?,
            num_clusters: self.num("prediction.num_clusters")?,
            models,
            metrics,
            trace,
        })
    }
}
