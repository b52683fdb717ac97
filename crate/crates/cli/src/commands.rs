use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use multireg::baselines::{sequential_ransac, tlinkage_cluster, RansacConfig, TLinkageConfig};
use multireg::clustering::{euclidean_cluster, Clustering, UNASSIGNED};
use multireg::em::{run_em, EmConfig};
use multireg::formats::{
    fmt_f64, parse_clustering, parse_scene, write_bench_csv, write_scene, KvDocument,
};
use multireg::geometry::{CorrespondenceSet, RigidTransform, RngSeed};
use multireg::horn::horn_register_subset;
use multireg::metrics::evaluate;
use multireg::scene::{generate_scene, make_good_initial_clustering, LabeledScene};
use multireg::theory::{
    hoeffding_bound, hoeffding_violation_rate, run_consistency_bench, run_sigma_ratio_bench,
    ConsistencyConfig, SigmaRatioConfig,
};

use crate::config::{Algorithm, BenchSuite, ExperimentConfig, InitKind};
use crate::record::{
    MetricsRecord, ModelRecord, ResultRecord, RunOutput, TraceRecord, TOOL_VERSION,
};
use crate::{read_file, write_file, CliError};

fn say(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io {
        path: PathBuf::from("<stdout>"),
        msg: e.to_string(),
    })
}

fn out_path(out: Option<&PathBuf>, default: &str) -> PathBuf {
    out.cloned().unwrap_or_else(|| PathBuf::from(default))
}

pub fn synth(
    cfg: &ExperimentConfig,
    out: Option<&PathBuf>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let scene = generate_scene(&cfg.scene).map_err(CliError::Invalid)?;
    let path = out_path(out, "scene.txt");
    write_file(&path, &write_scene(&scene))?;
    let s = &scene.spec;
    say(
        stdout,
        &format!(
            "wrote {}: n = {}, M = {}, sigma = {}, tau = {}\n",
            path.display(),
            scene.correspondences.len(),
            s.num_objects,
            s.sigma,
            s.tau
        ),
    )
}

pub fn load_scene(path: &PathBuf) -> Result<LabeledScene, CliError> {
    parse_scene(&read_file(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Horn fit of every cluster with at least three points; smaller clusters
/// are dissolved into label 0 and the rest renumbered in order.
pub fn fit_per_cluster(
    cs: &CorrespondenceSet,
    clustering: &Clustering,
) -> Result<(Clustering, Vec<ModelRecord>), CliError> {
    let members = clustering.members();
    let keep: Vec<bool> = members.iter().map(|m| m.len() >= 3).collect();
    let labels: Vec<usize> = clustering
        .labels()
        .iter()
        .map(|&l| {
            if l != UNASSIGNED && keep[l - 1] {
                l
            } else {
                UNASSIGNED
            }
        })
        .collect();
    let kept = Clustering::from_labels(labels);
    let assigned = cs.len() - kept.unassigned_count();
    let mut models = Vec::with_capacity(kept.num_clusters());
    for m in kept.members() {
        let est = horn_register_subset(cs, &m).map_err(|e| CliError::Algorithm(e.to_string()))?;
        models.push(ModelRecord {
            transform: est.transform,
            sigma_hat: Some(est.sigma_hat),
            weight: Some(m.len() as f64 / assigned as f64),
        });
    }
    Ok((kept, models))
}

pub fn initial_clustering(
    cfg: &ExperimentConfig,
    scene: &LabeledScene,
    tau: f64,
) -> Result<Clustering, CliError> {
    match cfg.init {
        InitKind::Euclidean => Ok(euclidean_cluster(&scene.correspondences, tau)),
        InitKind::Truth => Ok(scene.truth_clustering()),
        InitKind::GoodSplit => make_good_initial_clustering(
            scene,
            cfg.init_alpha,
            cfg.init_fragments,
            RngSeed(cfg.seed),
        )
        .map_err(|e| CliError::Algorithm(format!("good-split initialization: {e}"))),
        InitKind::FromFile => {
            let path = cfg
                .init_file
                .as_ref()
                .expect("checked when the config was built");
            let c = parse_clustering(&read_file(path)?)
                .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
            if c.len() != scene.correspondences.len() {
                return Err(CliError::Config(format!(
                    "init.file has {} labels for {} correspondences",
                    c.len(),
                    scene.correspondences.len()
                )));
            }
            Ok(c)
        }
    }
}

fn plain_models(transforms: Vec<RigidTransform>) -> Vec<ModelRecord> {
    transforms
        .into_iter()
        .map(|transform| ModelRecord {
            transform,
            sigma_hat: None,
            weight: None,
        })
        .collect()
}

fn execute(cfg: &ExperimentConfig, scene: &LabeledScene) -> Result<RunOutput, CliError> {
    let spec = &scene.spec;
    let cs = &scene.correspondences;
    let tau = cfg.em_tau.unwrap_or(spec.tau);
    let mut trace = None;
    let (clustering, models) = match cfg.algorithm {
        Algorithm::Em => {
            let em_cfg = EmConfig {
                tau,
                m_min: cfg.em_m_min,
                max_iters: cfg.em_max_iters,
                ..EmConfig::default()
            };
            em_cfg.validate().map_err(CliError::Invalid)?;
            let init = initial_clustering(cfg, scene, tau)?;
            let res = run_em(cs, &init, &em_cfg).map_err(|e| CliError::Algorithm(e.to_string()))?;
            trace = Some(TraceRecord {
                iterations: res.iterations_run,
                converged: res.converged,
                changes: res.changes_per_iteration(),
                sizes: res.trace.iter().map(|t| t.sizes.clone()).collect(),
            });
            let models = res
                .models
                .iter()
                .map(|m| ModelRecord {
                    transform: m.transform,
                    sigma_hat: Some(m.sigma_hat),
                    weight: Some(m.weight),
                })
                .collect();
            (res.clustering, models)
        }
        Algorithm::Sransac => {
            let mut rc = RansacConfig::for_noise(spec.sigma, RngSeed(cfg.seed));
            if let Some(t) = cfg.ransac_threshold {
                rc.inlier_threshold = t;
            }
            rc.max_trials = cfg.ransac_max_trials;
            rc.min_model_inliers = cfg.ransac_min_inliers;
            rc.validate().map_err(CliError::Invalid)?;
            let (c, t) =
                sequential_ransac(cs, &rc).map_err(|e| CliError::Algorithm(e.to_string()))?;
            (c, plain_models(t))
        }
        Algorithm::TLinkage => {
            let tc = TLinkageConfig {
                tau_t: cfg.tlinkage_tau_t.unwrap_or(spec.tau),
                tau: cfg.tlinkage_tau.unwrap_or(spec.tau),
                num_hypotheses: cfg.tlinkage_hypotheses,
                seed: RngSeed(cfg.seed),
            };
            tc.validate().map_err(CliError::Invalid)?;
            let init = initial_clustering(cfg, scene, tau)?;
            let merged =
                tlinkage_cluster(cs, &init, &tc).map_err(|e| CliError::Algorithm(e.to_string()))?;
            fit_per_cluster(cs, &merged)?
        }
        Algorithm::NaiveHorn => {
            let init = initial_clustering(cfg, scene, tau)?;
            fit_per_cluster(cs, &init)?
        }
    };
    let transforms: Vec<RigidTransform> = models.iter().map(|m| m.transform).collect();
    let report = evaluate(&clustering, &transforms, scene)
        .map_err(|e| CliError::Algorithm(e.to_string()))?;
    Ok(RunOutput {
        num_clusters: clustering.num_clusters(),
        labels: clustering.into_labels(),
        models,
        metrics: MetricsRecord::from(&report),
        trace,
    })
}

fn metrics_summary(m: &MetricsRecord) -> String {
    format!(
        "metrics.mask_iou = {}\nmetrics.point_error = {}\nmetrics.rotation_error = {}\nmetrics.translation_error = {}\n",
        fmt_f64(m.mask_iou),
        fmt_f64(m.point_error),
        fmt_f64(m.rotation_error),
        fmt_f64(m.translation_error)
    )
}

/// Loads the scene, runs the configured algorithm and writes a result
/// record. Algorithm failures are recorded in the file before the error is
/// returned.
pub fn run(
    cfg: &ExperimentConfig,
    out: Option<&PathBuf>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let scene_path = cfg
        .scene_file
        .clone()
        .ok_or_else(|| CliError::Config("no scene file: pass --scene or set scene.file".into()))?;
    let scene = load_scene(&scene_path)?;
    let start = Instant::now();
    let outcome = match execute(cfg, &scene) {
        Ok(o) => Ok(o),
        Err(CliError::Algorithm(msg)) => Err(msg),
        Err(other) => return Err(other),
    };
    let record = ResultRecord {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: cfg.hash(),
        config: cfg.settings().clone(),
        outcome,
        elapsed_ms: cfg
            .record_timings
            .then(|| start.elapsed().as_secs_f64() * 1e3),
    };
    let path = out_path(out, "result.txt");
    write_file(&path, &record.render())?;
    match &record.outcome {
        Ok(o) => {
            say(stdout, &format!("wrote {}\n", path.display()))?;
            say(stdout, &metrics_summary(&o.metrics))
        }
        Err(msg) => Err(CliError::Algorithm(msg.clone())),
    }
}

/// Scores `pred` (a result record or a clustering file) against `scene`.
/// Clustering files get one Horn fit per cluster of at least three points.
pub fn eval(
    pred: &PathBuf,
    scene_path: &PathBuf,
    out: Option<&PathBuf>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let scene = load_scene(scene_path)?;
    let text = read_file(pred)?;
    let n = scene.correspondences.len();
    let (clustering, transforms) = match ResultRecord::parse(&text) {
        Ok(record) => {
            let o = record.outcome.map_err(|msg| {
                CliError::Format(format!("{}: records a failed run: {msg}", pred.display()))
            })?;
            if o.labels.len() != n {
                return Err(CliError::Format(format!(
                    "{} labels for {n} correspondences",
                    o.labels.len()
                )));
            }
            let c = Clustering::from_labels(o.labels);
            if c.num_clusters() != o.models.len() {
                return Err(CliError::Format(format!(
                    "{} clusters but {} models",
                    c.num_clusters(),
                    o.models.len()
                )));
            }
            (c, o.models.iter().map(|m| m.transform).collect::<Vec<_>>())
        }
        Err(_) => {
            let c = parse_clustering(&text)
                .map_err(|e| CliError::Format(format!("{}: {e}", pred.display())))?;
            if c.len() != n {
                return Err(CliError::Format(format!(
                    "{} labels for {n} correspondences",
                    c.len()
                )));
            }
            let (kept, models) = fit_per_cluster(&scene.correspondences, &c)?;
            (kept, models.into_iter().map(|m| m.transform).collect())
        }
    };
    let report = evaluate(&clustering, &transforms, &scene).map_err(CliError::Invalid)?;
    let m = MetricsRecord::from(&report);
    let mut doc = KvDocument::new();
    let floats = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
    let entries = [
        ("metrics.point_error", fmt_f64(m.point_error)),
        (
            "metrics.point_error_per_point",
            fmt_f64(m.point_error_per_point),
        ),
        ("metrics.rotation_error", fmt_f64(m.rotation_error)),
        ("metrics.translation_error", fmt_f64(m.translation_error)),
        ("metrics.mask_iou", fmt_f64(m.mask_iou)),
        (
            "metrics.per_object.point_error",
            floats(&m.per_object_point_error),
        ),
        (
            "metrics.num_clusters",
            clustering.num_clusters().to_string(),
        ),
    ];
    for (k, v) in entries {
        doc.set(k, v).expect("well-formed entry");
    }
    let text = doc.render();
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    say(stdout, &text)
}

pub fn bench(
    cfg: &ExperimentConfig,
    out: Option<&PathBuf>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let b = &cfg.bench;
    let seed = RngSeed(cfg.seed);
    let mut summary = KvDocument::new();
    let mut put = |k: String, v: String| summary.set(k, v).expect("well-formed entry");
    match b.suite {
        BenchSuite::Consistency => {
            let bench = run_consistency_bench(&ConsistencyConfig {
                ms: b.ms.clone(),
                sigma: b.sigma,
                bound: b.bound,
                delta: b.delta,
                trials: b.trials,
                seed,
            })
            .map_err(CliError::Invalid)?;
            let path = out_path(out, "bench.csv");
            write_file(&path, &write_bench_csv(&bench.trials))?;
            for s in &bench.summary {
                let p = format!("summary.m{}", s.m);
                put(format!("{p}.trials"), s.trials.to_string());
                put(
                    format!("{p}.violation_rate_rot"),
                    fmt_f64(s.rot_violation_rate),
                );
                put(
                    format!("{p}.violation_rate_trans"),
                    fmt_f64(s.trans_violation_rate),
                );
                put(format!("{p}.median_err_rot"), fmt_f64(s.median_rot_err_sq));
                put(
                    format!("{p}.median_err_trans"),
                    fmt_f64(s.median_trans_err_sq),
                );
            }
            say(stdout, &format!("wrote {}\n", path.display()))?;
        }
        BenchSuite::SigmaRatio => {
            let res = run_sigma_ratio_bench(&SigmaRatioConfig {
                ms: b.ms.clone(),
                sigma: b.sigma,
                delta: b.delta,
                trials: b.trials,
                seed,
            })
            .map_err(CliError::Invalid)?;
            for s in &res {
                let p = format!("summary.m{}", s.m);
                put(format!("{p}.lower"), fmt_f64(s.lower));
                put(format!("{p}.upper"), fmt_f64(s.upper));
                put(format!("{p}.violations"), s.violations.to_string());
                put(format!("{p}.violation_rate"), fmt_f64(s.violation_rate));
                put(format!("{p}.within_0.01"), s.within(0.01).to_string());
            }
        }
        BenchSuite::Hoeffding => {
            for &n in &b.ms {
                let rate = hoeffding_violation_rate(n, b.bound, b.delta, b.trials, seed)
                    .map_err(CliError::Invalid)?;
                let bound =
                    hoeffding_bound(n as f64, b.bound, b.delta, 1.0).map_err(CliError::Invalid)?;
                put(format!("summary.n{n}.bound"), fmt_f64(bound));
                put(format!("summary.n{n}.violation_rate"), fmt_f64(rate));
            }
        }
    }
    let text = summary.render();
    if b.suite != BenchSuite::Consistency {
        if let Some(path) = out {
            write_file(path, &text)?;
        }
    }
    say(stdout, &text)
}
