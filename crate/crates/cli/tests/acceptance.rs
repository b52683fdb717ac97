//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::path::Path;
use std::time::{Duration, Instant};

use multireg::baselines::{
    sequential_ransac, tanimoto_distance, tlinkage_cluster, RansacConfig, TLinkageConfig,
};
use multireg::clustering::{check_goodness, euclidean_cluster, is_tau_connected, Clustering};
use multireg::em::{e_step, fit_models, run_em, EmConfig};
use multireg::formats::{
    parse_bench_csv, parse_clustering, parse_scene, write_clustering, write_scene,
};
use multireg::geometry::{
    geodesic_distance, random_in_ball, random_in_cube, random_transform, CorrespondenceSet,
    RngSeed, RotationMatrix, Vec3,
};
use multireg::horn::horn_register;
use multireg::metrics::{mask_iou, pose_error};
use multireg::scene::{generate_scene, make_good_initial_clustering, SceneSpec};
use multireg::theory::{
    alpha_threshold, c_from_alpha, m0_threshold, run_consistency_bench, run_sigma_ratio_bench,
    ConsistencyConfig, M0Variant, SigmaRatioConfig, TheoremInputs,
};
use multireg_cli::{run_with_args, ResultRecord};
use rand::Rng;

thread_local! {
    static EMITTED: RefCell<Vec<RotationMatrix>> = const { RefCell::new(Vec::new()) };
}

fn emit(r: RotationMatrix) {
    EMITTED.with(|e| e.borrow_mut().push(r));
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run(id: &str, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = limit.map_or(true, |l| elapsed < l);
    let pass = v.pass && in_time;
    let budget = match limit {
        Some(l) => format!("{:.2} s of {:.0} s", elapsed.as_secs_f64(), l.as_secs_f64()),
        None => format!("{:.2} s", elapsed.as_secs_f64()),
    };
    println!(
        "{} {id:<3} {title}: {} [{budget}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail
    );
    pass
}

fn criterion_1() -> Verdict {
    let (mut worst_rot, mut worst_trans) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let scene = generate_scene(&SceneSpec::uniform(1, 50, 0.0, 0.05, 1.0, seed)).unwrap();
        let est = horn_register(&scene.correspondences).unwrap();
        let truth = &scene.true_transforms[0];
        emit(est.transform.rotation);
        worst_rot =
            worst_rot.max(geodesic_distance(&est.transform.rotation, &truth.rotation).unwrap());
        worst_trans = worst_trans.max((est.transform.translation - truth.translation).norm());
    }
    verdict(
        worst_rot <= 1e-9 && worst_trans <= 1e-9,
        format!("max rotation error {worst_rot:.2e} rad, max translation error {worst_trans:.2e}"),
    )
}

fn criterion_2a(bench: &multireg::theory::ConsistencyBench) -> Verdict {
    let worst = bench
        .summary
        .iter()
        .map(|s| s.rot_violation_rate.max(s.trans_violation_rate))
        .fold(0.0, f64::max);
    let rates: Vec<String> = bench
        .summary
        .iter()
        .map(|s| {
            format!(
                "m={}: {}/{}",
                s.m, s.rot_violation_rate, s.trans_violation_rate
            )
        })
        .collect();
    verdict(
        worst <= 2.0 * 0.05,
        format!("violation rates rot/trans {}", rates.join(", ")),
    )
}

fn criterion_2b(bench: &multireg::theory::ConsistencyBench) -> Verdict {
    let lo = bench.summary_for(100).unwrap().median_rot_err_sq;
    let hi = bench.summary_for(10_000).unwrap().median_rot_err_sq;
    let ratio = lo / hi;
    verdict(
        (5.0..=20.0).contains(&ratio),
        format!(
            "median squared rotation error ratio m=100 / m=10000 = {ratio:.2}, required [5, 20]"
        ),
    )
}

fn criterion_3() -> Verdict {
    let res = run_sigma_ratio_bench(&SigmaRatioConfig {
        ms: vec![100_000],
        sigma: 0.1,
        delta: 0.1,
        trials: 100,
        seed: RngSeed(3),
    })
    .unwrap();
    let s = &res[0];
    let within = s.within(0.01);
    verdict(
        within >= 99 && s.violation_rate <= 0.1,
        format!(
            "{within}/100 within 0.01 of 1/sqrt(3), interval violation rate {}",
            s.violation_rate
        ),
    )
}

fn criterion_4() -> Verdict {
    let tau = 0.1;
    let mut failures = Vec::new();
    let (mut max_iters, mut max_rot) = (0usize, 0.0f64);
    for seed in 0..20u64 {
        let scene =
            generate_scene(&SceneSpec::uniform(3, 2000, 0.005 * tau, tau, 1.0, seed)).unwrap();
        let init = make_good_initial_clustering(&scene, 2.0, 3, RngSeed(seed)).unwrap();
        let good = check_goodness(&init, &scene, 2.0, 200);
        let res = run_em(&scene.correspondences, &init, &EmConfig::new(tau)).unwrap();
        let transforms: Vec<_> = res.models.iter().map(|m| m.transform).collect();
        transforms.iter().for_each(|t| emit(t.rotation));
        let iou = mask_iou(&res.clustering, &scene.truth_clustering()).unwrap();
        let pose = pose_error(&res.clustering, &transforms, &scene).unwrap();
        let rot = pose
            .per_cluster
            .iter()
            .map(|p| p.rotation_error)
            .fold(0.0, f64::max);
        max_iters = max_iters.max(res.iterations_run);
        max_rot = max_rot.max(rot);
        if !(good.pass && res.converged && res.iterations_run <= 20 && iou == 1.0 && rot <= 5e-3) {
            failures.push(format!(
                "seed {seed}: good={} converged={} iters={} iou={iou} rot={rot:.2e}",
                good.pass, res.converged, res.iterations_run
            ));
        }
    }
    let detail = if failures.is_empty() {
        format!("20/20 seeds recovered, max iterations {max_iters}, max rotation error {max_rot:.2e} rad")
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

fn criterion_5() -> Verdict {
    let (tau, sigma) = (0.1, 0.01);
    let (mut em_sum, mut rs_sum) = (0.0, 0.0);
    for seed in 0..10u64 {
        let scene = generate_scene(
            &SceneSpec::uniform(3, 300, sigma, tau, 1.0, 500 + seed).with_outliers(100),
        )
        .unwrap();
        let truth = scene.truth_clustering();
        let init = make_good_initial_clustering(&scene, 2.0, 3, RngSeed(seed)).unwrap();
        em_sum += match run_em(&scene.correspondences, &init, &EmConfig::new(tau)) {
            Ok(r) => {
                r.models.iter().for_each(|m| emit(m.transform.rotation));
                mask_iou(&r.clustering, &truth).unwrap()
            }
            Err(_) => 0.0,
        };
        let (c, models) = sequential_ransac(
            &scene.correspondences,
            &RansacConfig::for_noise(sigma, RngSeed(seed)),
        )
        .unwrap();
        models.iter().for_each(|t| emit(t.rotation));
        rs_sum += mask_iou(&c, &truth).unwrap();
    }
    let (em, rs) = (em_sum / 10.0, rs_sum / 10.0);
    verdict(
        em >= rs,
        format!("mean IoU EM {em:.4} vs sequential RANSAC {rs:.4}"),
    )
}

fn bfs_components(points: &[Vec3], tau: f64) -> usize {
    let n = points.len();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for w in 0..n {
                if !seen[w] && (points[v] - points[w]).norm() <= tau {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
    }
    count
}

fn criterion_6() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    // (b) row normalization when every gate passes
    let scene = generate_scene(&SceneSpec::uniform(2, 60, 0.01, 0.05, 1.0, 6)).unwrap();
    let cfg = EmConfig::new(10.0);
    let truth = scene.truth_clustering();
    let models = fit_models(&scene.correspondences, &truth, &cfg).unwrap();
    let w = e_step(&scene.correspondences, &truth, &models, &cfg);
    let row_err = (0..w.rows())
        .map(|i| (w.row_sum(i) - 1.0).abs())
        .fold(0.0, f64::max);
    ok &= row_err <= 1e-9;
    notes.push(format!("(b) max |row sum - 1| {row_err:.1e}"));

    // (c) grid connectivity against brute-force BFS
    let mut rng = RngSeed(61).rng();
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let tau = rng.random_range(0.05..0.4);
        let pts: Vec<Vec3> = (0..n).map(|_| random_in_ball(&mut rng, 1.0)).collect();
        if is_tau_connected(&pts, tau) != (bfs_components(&pts, tau) == 1) {
            mismatches += 1;
        }
    }
    ok &= mismatches == 0;
    notes.push(format!("(c) {mismatches}/100 connectivity mismatches"));

    // (d) Horn equivariance under rigid perturbation of b
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let mut rng = RngSeed(6_400 + k).rng();
        let truth = random_transform(&mut rng, 1.0);
        let g = random_transform(&mut rng, 2.0);
        let a: Vec<Vec3> = (0..30).map(|_| random_in_ball(&mut rng, 1.0)).collect();
        let b: Vec<Vec3> = a
            .iter()
            .map(|p| truth.apply(p) + random_in_cube(&mut rng, 0.05))
            .collect();
        let moved: Vec<Vec3> = b.iter().map(|p| g.apply(p)).collect();
        let base = horn_register(&CorrespondenceSet::from_pairs(&a, &b).unwrap())
            .unwrap()
            .transform;
        let est = horn_register(&CorrespondenceSet::from_pairs(&a, &moved).unwrap())
            .unwrap()
            .transform;
        emit(base.rotation);
        emit(est.rotation);
        let want = g.compose(&base);
        worst = worst
            .max((est.rotation.matrix() - want.rotation.matrix()).norm())
            .max((est.translation - want.translation).norm());
    }
    ok &= worst <= 1e-9;
    notes.push(format!("(d) max equivariance gap {worst:.1e}"));

    // (e) Tanimoto axioms
    let mut rng = RngSeed(65).rng();
    let mut bad = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..20);
        let u: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let d = tanimoto_distance(&u, &v);
        let sym = d == tanimoto_distance(&v, &u);
        let ident = tanimoto_distance(&u, &u).abs() <= 1e-12;
        if !((0.0..=1.0).contains(&d) && sym && ident) {
            bad += 1;
        }
    }
    ok &= bad == 0;
    notes.push(format!("(e) {bad}/1000 Tanimoto axiom failures"));

    // T-Linkage models feed (a) too
    let scene =
        generate_scene(&SceneSpec::uniform(2, 80, 0.005, 0.1, 1.0, 66).with_outliers(10)).unwrap();
    let init = euclidean_cluster(&scene.correspondences, 0.1);
    let tl = TLinkageConfig {
        tau_t: 0.1,
        tau: 0.1,
        num_hypotheses: 100,
        seed: RngSeed(66),
    };
    let merged = tlinkage_cluster(&scene.correspondences, &init, &tl).unwrap();
    for m in merged.members().iter().filter(|m| m.len() >= 3) {
        emit(
            multireg::horn::horn_register_subset(&scene.correspondences, m)
                .unwrap()
                .transform
                .rotation,
        );
    }

    // (a) every rotation emitted by any suite so far
    let (count, invalid) = EMITTED.with(|e| {
        let e = e.borrow();
        (e.len(), e.iter().filter(|r| !r.is_valid()).count())
    });
    ok &= invalid == 0 && count > 0;
    notes.insert(0, format!("(a) {invalid}/{count} invalid rotations"));
    verdict(ok, notes.join(", "))
}

fn criterion_7() -> Verdict {
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let inputs = TheoremInputs {
        alpha: 3.0,
        delta: 0.05,
        bound: 1.0,
        lambda: 1.0 / 3.0,
        sigma: 0.1,
    };
    let b = m0_threshold(&inputs, M0Variant::B { extra_floor: false }).unwrap();
    let b_hand = 2.5e8 * 4.0 * 360f64.ln() * 9.0;
    let a_in = TheoremInputs {
        alpha: 8.0 * 8f64.exp(),
        ..inputs
    };
    let a = m0_threshold(&a_in, M0Variant::A).unwrap();
    let a_hand = 2.5e4 * 360f64.ln() * 9.0 * 0.5;
    let alpha0 = alpha_threshold(0.0).unwrap();
    let alpha_hand = 8.0 * 6f64.exp();
    let inverse = (0..=30)
        .map(|k| {
            let c = k as f64 * 0.1;
            (c_from_alpha(alpha_threshold(c).unwrap()).unwrap() - c).abs()
        })
        .fold(0.0, f64::max);
    let errs = [rel(b, b_hand), rel(a, a_hand), rel(alpha0, alpha_hand)];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(
        worst <= 1e-12 && inverse <= 1e-12,
        format!(
            "m0 variant B {b:.4e}, variant A {a:.4e}, alpha_threshold(0) {alpha0:.4}, max rel error {worst:.1e}, inverse gap {inverse:.1e}"
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let mut full = vec!["multireg".to_string()];
    full.extend(
        args.iter()
            .map(|a| a.replace("{dir}", &dir.display().to_string())),
    );
    let mut sink = Vec::new();
    run_with_args(full, &mut sink).map_err(|e| e.to_string())
}

fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut notes = Vec::new();
    let mut ok = true;
    let common = [
        "--set",
        "scene.tau=0.1",
        "--set",
        "scene.sigma=0.0005",
        "--seed",
        "8",
    ];
    let mut pairs: Vec<(String, Vec<&str>)> = Vec::new();
    pairs.push(("scene".into(), [&["synth"][..], &common].concat()));
    for alg in ["em", "sransac", "tlinkage", "naive-horn"] {
        let init = if alg == "em" {
            "init=good-split"
        } else {
            "init=euclidean"
        };
        pairs.push((
            format!("result-{alg}"),
            [
                &[
                    "run",
                    "--scene",
                    "{dir}/scene-a.txt",
                    "--algorithm",
                    alg,
                    "--set",
                    init,
                ][..],
                &common,
            ]
            .concat(),
        ));
    }
    pairs.push((
        "bench".into(),
        vec![
            "bench",
            "--seed",
            "8",
            "--set",
            "bench.ms=20,200",
            "--set",
            "bench.trials=5",
        ],
    ));
    pairs.push((
        "eval".into(),
        vec!["eval", "{dir}/result-em-a.txt", "{dir}/scene-a.txt"],
    ));
    for (name, args) in &pairs {
        let ext = if name == "bench" { "csv" } else { "txt" };
        for copy in ["a", "b"] {
            let out = format!("{{dir}}/{name}-{copy}.{ext}");
            let mut a = args.clone();
            a.extend(["--out", out.as_str()]);
            if let Err(e) = cli(dir, &a) {
                ok = false;
                notes.push(format!("{name}: {e}"));
            }
        }
        let same = std::fs::read(dir.join(format!("{name}-a.{ext}"))).ok()
            == std::fs::read(dir.join(format!("{name}-b.{ext}"))).ok();
        ok &= same;
        if !same {
            notes.push(format!("{name} differs between runs"));
        }
    }

    let scene_text = String::from_utf8(bytes(dir, "scene-a.txt")).unwrap();
    let scene = parse_scene(&scene_text).unwrap();
    let scene_rt =
        write_scene(&scene) == scene_text && parse_scene(&write_scene(&scene)).unwrap() == scene;
    let result_text = String::from_utf8(bytes(dir, "result-em-a.txt")).unwrap();
    let record = ResultRecord::parse(&result_text).unwrap();
    let result_rt =
        record.render() == result_text && ResultRecord::parse(&record.render()).unwrap() == record;
    if let Ok(o) = &record.outcome {
        o.models.iter().for_each(|m| emit(m.transform.rotation));
    }
    let labels = record
        .outcome
        .as_ref()
        .map(|o| o.labels.clone())
        .unwrap_or_default();
    let clustering = Clustering::from_labels(labels);
    let cl_text = write_clustering(&clustering);
    let cl_rt = parse_clustering(&cl_text).unwrap() == clustering
        && write_clustering(&parse_clustering(&cl_text).unwrap()) == cl_text;
    let csv = String::from_utf8(bytes(dir, "bench-a.csv")).unwrap();
    let csv_rt = multireg::formats::write_bench_csv(&parse_bench_csv(&csv).unwrap()) == csv;
    ok &= scene_rt && result_rt && cl_rt && csv_rt;
    notes.push(format!(
        "{} commands byte-identical on rerun; round trips scene={scene_rt} clustering={cl_rt} result={result_rt} csv={csv_rt}",
        pairs.len()
    ));
    verdict(ok, notes.join("; "))
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let mut results = Vec::new();
    results.push(run("1", "noiseless exact recovery", secs(1), criterion_1));

    let start = Instant::now();
    let bench = run_consistency_bench(&ConsistencyConfig {
        ms: vec![100, 1_000, 10_000],
        sigma: 0.1,
        bound: 1.0,
        delta: 0.05,
        trials: 200,
        seed: RngSeed(2),
    })
    .unwrap();
    let bench_time = start.elapsed();
    let under = bench_time < Duration::from_secs(60);
    results.push(run("2a", "consistency bound violation rate", None, || {
        let v = criterion_2a(&bench);
        verdict(
            v.pass && under,
            format!(
                "{} (bench {:.2} s of 60 s)",
                v.detail,
                bench_time.as_secs_f64()
            ),
        )
    }));
    results.push(run("2b", "consistency error scaling", None, || {
        criterion_2b(&bench)
    }));
    results.push(run("3", "sigma-ratio interval", secs(10), criterion_3));
    results.push(run("4", "EM ground-truth recovery", secs(30), criterion_4));
    results.push(run("5", "EM vs sequential RANSAC", None, criterion_5));
    results.push(run("6", "property suites", None, criterion_6));
    results.push(run("7", "formula evaluators", None, criterion_7));
    results.push(run("8", "determinism and round trips", None, criterion_8));

    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
