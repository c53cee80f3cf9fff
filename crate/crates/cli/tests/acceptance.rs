//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. `ACCEPT_ONLY=ladder,e2e` runs a subset by key.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use radar_core::density::{fit_gmm, CovarianceKind, Covariances, GmmModel, GmmOptions};
use radar_core::divergence::{mmd_gaussian, sinkhorn_divergence, swd, sym_weighted_kl, Bandwidth, SinkhornOptions};
use radar_core::evaluation::{enumerate_blends, rank_blends, spearman, BlendMode, RankBy};
use radar_core::geometry::{euclid_step, geodesic_descriptor, triad};
use radar_core::seed::rng_from_seed;
use radar_core::synthetic::{dpi_check, gen_pack, proxy_gains, GainsProxy, ShiftKind, SyntheticSpec};
use radar_core::{RadarConfig, RadarEngine};

/// Baseline pairs used by every desk-scale engine run.
const DESK_BASELINE_PAIRS: usize = 1 << 14;
const LADDER_STEP: f64 = 4.0;
const E2E_SEVERITIES: [f64; 4] = [3.0, 6.0, 10.0, 15.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn desk_config(seed: u64) -> RadarConfig {
    RadarConfig {
        baseline_pairs: DESK_BASELINE_PAIRS,
        seed,
        ..RadarConfig::default()
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| normal(rng)).collect()
}

fn within_budget(elapsed: Duration, budget_secs: u64) -> (bool, String) {
    (elapsed.as_secs() < budget_secs, format!("{:.1}s of {budget_secs}s", elapsed.as_secs_f64()))
}

fn triangle_closure() -> Outcome {
    let t = Instant::now();
    let mut rng = rng_from_seed(11);
    let mut worst: f64 = 0.0;
    for d in [2, 8, 64] {
        for _ in 0..100_000 {
            let (a, b, c) = (random_vec(&mut rng, d), random_vec(&mut rng, d), random_vec(&mut rng, d));
            let tr = triad(&a, &b, &c).unwrap();
            for i in 0..d {
                worst = worst.max((tr.sep[i] + tr.detour[i] - tr.traj[i]).abs());
            }
        }
    }
    let (fast, time) = within_budget(t.elapsed(), 5);
    outcome(worst <= 1e-6 && fast, format!("max error {worst:.2e}, {time}"))
}

fn descriptor_ranges() -> Outcome {
    let mut rng = rng_from_seed(12);
    let (mut theta_ok, mut min_d) = (true, f64::INFINITY);
    for i in 0..100_000 {
        let d = [2, 8, 64][i % 3];
        let (a, b, c) = (random_vec(&mut rng, d), random_vec(&mut rng, d), random_vec(&mut rng, d));
        let s = euclid_step(&a, &b, &c);
        theta_ok &= (0.0..=std::f64::consts::PI).contains(&s.theta);
        min_d = min_d.min(s.d);
    }
    // anchor, partner and next position in order along one line
    let (mut max_theta, mut max_abs_d): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let d = 8;
        let a = random_vec(&mut rng, d);
        let u = random_vec(&mut rng, d);
        let s1: f64 = rng.random_range(0.1..2.0);
        let s2: f64 = s1 + rng.random_range(0.1..2.0);
        let b: Vec<f64> = a.iter().zip(&u).map(|(x, v)| x + s1 * v).collect();
        let c: Vec<f64> = a.iter().zip(&u).map(|(x, v)| x + s2 * v).collect();
        let s = euclid_step(&a, &b, &c);
        max_theta = max_theta.max(s.theta);
        max_abs_d = max_abs_d.max(s.d.abs());
    }
    outcome(
        theta_ok && min_d >= -1e-9 && max_theta <= 1e-6 && max_abs_d <= 1e-9,
        format!("min d {min_d:.2e}, collinear max theta {max_theta:.2e}, max |d| {max_abs_d:.2e}"),
    )
}

fn geodesic_identities() -> Outcome {
    let mut rng = rng_from_seed(13);
    let (mut max_d, mut max_pi_gap, mut max_rescale): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let d = 8;
        // orthonormal u, v spanning a great circle
        let u = random_vec(&mut rng, d);
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u: Vec<f64> = u.iter().map(|x| x / nu).collect();
        let w = random_vec(&mut rng, d);
        let proj: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
        let v: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - proj * b).collect();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|x| x / nv).collect();
        let at = |phi: f64, r: f64| -> Vec<f64> { u.iter().zip(&v).map(|(a, b)| r * (phi.cos() * a + phi.sin() * b)).collect() };
        let p0: f64 = rng.random_range(0.0..1.0);
        let p1 = p0 + rng.random_range(0.1..1.0);
        let p2 = p1 + rng.random_range(0.1..1.0);
        let s = geodesic_descriptor(&at(p0, 1.0), &at(p1, 1.0), &at(p2, 1.0)).unwrap();
        max_d = max_d.max(s.d.abs());
        max_pi_gap = max_pi_gap.max((std::f64::consts::PI - s.theta).abs());

        let (a, b, c) = (random_vec(&mut rng, d), random_vec(&mut rng, d), random_vec(&mut rng, d));
        let base = geodesic_descriptor(&a, &b, &c).unwrap();
        let scale = |x: &[f64], k: f64| -> Vec<f64> { x.iter().map(|v| v * k).collect() };
        let (ka, kb, kc) = (rng.random_range(0.01..100.0), rng.random_range(0.01..100.0), rng.random_range(0.01..100.0));
        let r = geodesic_descriptor(&scale(&a, ka), &scale(&b, kb), &scale(&c, kc)).unwrap();
        max_rescale = max_rescale.max((r.theta - base.theta).abs()).max((r.d - base.d).abs());
    }
    outcome(
        max_d <= 1e-9 && max_pi_gap <= 1e-6 && max_rescale <= 1e-9,
        format!("great-circle |d| {max_d:.2e}, |pi - theta| {max_pi_gap:.2e}, rescaling {max_rescale:.2e}"),
    )
}

fn gmm_correctness() -> Outcome {
    let mut worst_drop: f64 = 0.0;
    for set in 0..20u64 {
        let mut rng = rng_from_seed(100 + set);
        let (n, d) = (300, 3);
        let x = Array2::from_shape_fn((n, d), |(i, _)| normal(&mut rng) + if i % 3 == 0 { 4.0 } else { 0.0 });
        for kind in [CovarianceKind::Diag, CovarianceKind::Full, CovarianceKind::Tied, CovarianceKind::Spherical] {
            let fit = fit_gmm(x.view(), &GmmOptions::new(3, kind, set)).unwrap();
            for w in fit.trace.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
            }
        }
    }
    let mut rng = rng_from_seed(14);
    let x = Array2::from_shape_fn((500, 4), |(_, j)| 2.0 * normal(&mut rng) + j as f64);
    let fit = fit_gmm(x.view(), &GmmOptions::new(1, CovarianceKind::Diag, 0)).unwrap();
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let var = x.var_axis(ndarray::Axis(0), 0.0);
    let Covariances::Diag(v) = &fit.model.covariances else { unreachable!() };
    let mean_err = (&fit.model.means.row(0) - &mean).iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let var_err = (&v.row(0) - &(&var + fit.model.reg)).iter().fold(0.0f64, |m, e| m.max(e.abs()));
    outcome(
        worst_drop <= 1e-8 && mean_err <= 1e-10 && var_err <= 1e-8,
        format!("largest objective drop {worst_drop:.2e}, K=1 mean error {mean_err:.2e}, variance error {var_err:.2e}"),
    )
}

fn single_gaussian(mu: &[f64], var: &[f64]) -> GmmModel {
    GmmModel {
        weights: vec![1.0],
        means: Array2::from_shape_vec((1, mu.len()), mu.to_vec()).unwrap(),
        covariances: Covariances::Diag(Array2::from_shape_vec((1, var.len()), var.to_vec()).unwrap()),
        reg: 0.0,
    }
}

/// Closed-form `KL(N(m1, v1) || N(m2, v2))` for diagonal Gaussians.
fn gaussian_kl(m1: &[f64], v1: &[f64], m2: &[f64], v2: &[f64]) -> f64 {
    (0..m1.len())
        .map(|i| 0.5 * (v1[i] / v2[i] + (m2[i] - m1[i]).powi(2) / v2[i] - 1.0 + (v2[i] / v1[i]).ln()))
        .sum()
}

fn kl_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = rng_from_seed(15);
    let mut cases = vec![(vec![0.0], vec![1.0], vec![1.0], vec![1.0], 1, 1)];
    while cases.len() < 11 {
        let d = rng.random_range(1..4);
        let mu1: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu2: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..3.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..3.0)).collect();
        cases.push((mu1, v1, mu2, v2, rng.random_range(50..500), rng.random_range(50..500)));
    }
    let mut worst_z: f64 = 0.0;
    for (i, (m1, v1, m2, v2, na, nb)) in cases.iter().enumerate() {
        let (p, q) = (single_gaussian(m1, v1), single_gaussian(m2, v2));
        let r = sym_weighted_kl(&p, &q, *na, *nb, 100_000, i as u64).unwrap();
        let (wa, wb) = (*na as f64 / (na + nb) as f64, *nb as f64 / (na + nb) as f64);
        let exact = wa * gaussian_kl(m1, v1, m2, v2) + wb * gaussian_kl(m2, v2, m1, v1);
        if i == 0 {
            // N(0,1) vs N(1,1): 0.5 in either direction
            assert!((exact - 0.5).abs() < 1e-12);
        }
        worst_z = worst_z.max((r.value - exact).abs() / r.mc_std_error.unwrap());
    }
    let (fast, time) = within_budget(t.elapsed(), 10);
    outcome(worst_z <= 3.0 && fast, format!("worst |error| / SE {worst_z:.2} over {} cases, {time}", cases.len()))
}

fn divergence_nullity() -> Outcome {
    let mut rng = rng_from_seed(16);
    let a = Array2::from_shape_fn((400, 6), |_| normal(&mut rng));
    let fit = fit_gmm(a.view(), &GmmOptions::new(3, CovarianceKind::Diag, 0)).unwrap();
    let kl = sym_weighted_kl(&fit.model, &fit.model, 400, 400, 100_000, 0).unwrap();
    let sw = swd(a.view(), a.view(), 128, 0).unwrap();
    let sk = sinkhorn_divergence(
        a.view(),
        a.view(),
        &SinkhornOptions {
            epsilon: 0.05,
            max_iter: 1000,
            tol: 1e-6,
            debiased: true,
        },
    )
    .unwrap();
    let mmd = mmd_gaussian(a.view(), a.view(), Bandwidth::Median).unwrap();
    let kl_ok = kl.value <= 1e-6 + 3.0 * kl.mc_std_error.unwrap();
    outcome(
        kl_ok && sw <= 1e-6 && sk.raw.abs() <= 1e-9 && mmd.value <= 1e-6,
        format!("kl {:.2e}, swd {sw:.2e}, sinkhorn {:.2e}, mmd {:.2e}", kl.value, sk.raw, mmd.value),
    )
}

fn tv_dpi() -> Outcome {
    let mut rng = rng_from_seed(17);
    let mut failures = Vec::new();
    for i in 0..10u64 {
        let dim = rng.random_range(1..=5);
        let kind = [ShiftKind::Translation, ShiftKind::Noise, ShiftKind::Rotation][i as usize % 3];
        let mut spec = SyntheticSpec::ladder(3, dim, rng.random_range(3..7), 2000, kind, &[rng.random_range(0.3..2.0)], i);
        spec.layer_map.contraction = rng.random_range(0.6..1.0);
        spec.layer_map.tanh = rng.random_bool(0.5);
        let r = dpi_check(&spec, 8).unwrap();
        if !r.non_increasing {
            failures.push(format!("spec {i}: {:?}", r.tv));
        }
    }
    outcome(failures.is_empty(), if failures.is_empty() { "10/10 specs".into() } else { failures.join("; ") })
}

fn ladder_spec(seed: u64) -> SyntheticSpec {
    let severities: Vec<f64> = (1..=5).map(|s| LADDER_STEP * s as f64).collect();
    SyntheticSpec::ladder(5, 16, 8, 500, ShiftKind::Translation, &severities, seed)
}

fn severity_monotonicity() -> Outcome {
    let t = Instant::now();
    let (seeds, layers) = (10u64, 8usize);
    // scores[seed][layer][severity]
    let scores: Vec<Vec<Vec<f64>>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let pack = gen_pack(&ladder_spec(seed)).unwrap();
            let engine = RadarEngine::new(&pack, desk_config(seed)).unwrap();
            (0..layers)
                .map(|l| (1..=5).map(|s| engine.radar_score("target", &[&format!("s{s}")], l).unwrap().value).collect())
                .collect()
        })
        .collect();
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    let good_seeds = scores.iter().filter(|per_layer| per_layer.iter().all(|v| monotone(v))).count();
    let severity: Vec<f64> = (1..=5).map(|s| s as f64).collect();
    let mut min_rho: f64 = 1.0;
    for l in 0..layers {
        let mean: Vec<f64> = (0..5).map(|s| scores.iter().map(|x| x[l][s]).sum::<f64>() / seeds as f64).collect();
        min_rho = min_rho.min(spearman(&mean, &severity).unwrap());
    }
    let (fast, time) = within_budget(t.elapsed(), 120);
    outcome(
        good_seeds >= 9 && min_rho == 1.0 && fast,
        format!("monotone at every layer for {good_seeds}/10 seeds, min per-layer Spearman {min_rho:.3}, {time}"),
    )
}

fn e2e_pack() -> radar_core::FeaturePack {
    gen_pack(&SyntheticSpec::ladder(5, 16, 8, 500, ShiftKind::Translation, &E2E_SEVERITIES, 0)).unwrap()
}

fn e2e_blends(pack: &radar_core::FeaturePack) -> Vec<Vec<String>> {
    let sources: Vec<&str> = pack.domain_names().filter(|n| *n != "target").collect();
    enumerate_blends(&sources, BlendMode::Pairwise).unwrap()
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let pack = e2e_pack();
    let blends = e2e_blends(&pack);
    let gains = proxy_gains(&pack, "target", &blends, &GainsProxy::default()).unwrap();
    let engine = RadarEngine::new(&pack, desk_config(0)).unwrap();
    let ranking = rank_blends(&engine, "target", &blends, None, RankBy::Mean, Some(&gains)).unwrap();
    let report = ranking.report.unwrap();
    let (fast, time) = within_budget(t.elapsed(), 300);
    outcome(
        report.mean_rho_metric <= -0.9 && report.mci <= 0.0 && fast,
        format!(
            "mean Spearman(score, gain) {:+.3}, centroid baseline {:+.3}, MCI {:+.3}, {time}",
            report.mean_rho_metric, report.mean_rho_base, report.mci
        ),
    )
}

/// Twenty target/source pairs with graded shifts.
fn stability_pairs() -> Vec<(radar_core::FeaturePack, u64)> {
    (0..20u64)
        .map(|i| {
            let severity = 1.0 + 0.75 * i as f64;
            let pack = gen_pack(&SyntheticSpec::ladder(5, 16, 8, 500, ShiftKind::Translation, &[severity], 1000 + i)).unwrap();
            (pack, i)
        })
        .collect()
}

fn sample_size_stability() -> Outcome {
    let t = Instant::now();
    let layer = 4;
    let (small, large): (Vec<f64>, Vec<f64>) = stability_pairs()
        .into_par_iter()
        .map(|(pack, i)| {
            let score = |n: usize| {
                let cfg = RadarConfig {
                    n_pairs: n,
                    ..desk_config(i)
                };
                RadarEngine::new(&pack, cfg).unwrap().radar_score("target", &["s1"], layer).unwrap().value
            };
            (score(4096), score(65536))
        })
        .unzip();
    let rho = spearman(&small, &large).unwrap();
    let (fast, time) = within_budget(t.elapsed(), 600);
    outcome(rho >= 0.95 && fast, format!("Spearman(N=4096, N=65536) {rho:.3} over 20 pairs, {time}"))
}

fn seed_stability() -> Outcome {
    let pack = gen_pack(&ladder_spec(0)).unwrap();
    let layer = 4;
    let mut worst: (f64, String) = (0.0, String::new());
    for s in 1..=5 {
        let name = format!("s{s}");
        let vals: Vec<f64> = (0..10u64)
            .into_par_iter()
            .map(|seed| RadarEngine::new(&pack, RadarConfig { seed, ..RadarConfig::default() }).unwrap().radar_score("target", &[&name], layer).unwrap().value)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        let rsd = sd / mean;
        if rsd >= worst.0 {
            worst = (rsd, name);
        }
    }
    outcome(worst.0 <= 0.05, format!("worst relative std {:.2}% ({})", 100.0 * worst.0, worst.1))
}

fn radar(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_radar")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn write_spec(dir: &Path) -> String {
    let spec = SyntheticSpec::ladder(3, 6, 4, 120, ShiftKind::Translation, &[1.0, 3.0, 6.0], 5);
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path.display().to_string()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let pack = dir.path().join("pack").display().to_string();
    let gains = dir.path().join("gains.csv").display().to_string();
    let grid = dir.path().join("grid.json").display().to_string();
    std::fs::write(&grid, r#"[{"covariance": "diag"}, {"covariance": "spherical"}, {"algorithm": "mmd"}]"#).unwrap();
    if radar(&["synth", "--spec", &spec, "--out", &pack]).0 != 0 || radar(&["proxy-gains", "--pack", &pack, "--target", "target", "--out", &gains]).0 != 0 {
        return outcome(false, "setup commands failed");
    }
    let small = ["--pairs", "512", "--baseline-pairs", "2048", "--seed", "7"];
    let commands: Vec<Vec<&str>> = vec![
        vec!["--json", "validate", &pack],
        [&["--json", "score", "--pack", &pack, "--target", "target", "--sources", "s1+s2", "--all-layers"][..], &small].concat(),
        [&["--json", "rank", "--pack", &pack, "--target", "target", "--gains", &gains][..], &small].concat(),
        [&["rank", "--pack", &pack, "--target", "target", "--mode", "full"][..], &small].concat(),
        vec!["proxy-gains", "--pack", &pack, "--target", "target"],
        vec!["centroids", "--pack", &pack, "--layer", "0"],
        [&["--json", "ablate", "--pack", &pack, "--target", "target", "--gains", &gains, "--grid", &grid, "--layer", "1"][..], &small].concat(),
    ];
    let mut mismatched = Vec::new();
    for c in &commands {
        let (code_a, a) = radar(c);
        let (code_b, b) = radar(c);
        if code_a != 0 || code_b != 0 || a != b || a.is_empty() {
            mismatched.push(c[..2].join(" "));
        }
    }
    // the synthesized pack itself
    let again = dir.path().join("pack2");
    radar(&["synth", "--spec", &spec, "--out", &again.display().to_string()]);
    let same_pack = (0..4).all(|l| {
        let f = radar_core::feature_pack::layer_file_name(l);
        std::fs::read(Path::new(&pack).join(&f)).ok() == std::fs::read(again.join(&f)).ok()
    });
    outcome(
        mismatched.is_empty() && same_pack,
        if mismatched.is_empty() {
            format!("{} commands byte-identical across runs, pack files identical: {same_pack}", commands.len())
        } else {
            format!("differing or failing: {}", mismatched.join(", "))
        },
    )
}

fn ablation_grid() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pack_dir = dir.path().join("pack");
    let pack = e2e_pack();
    radar_core::feature_pack::write_pack(&pack, &pack_dir).unwrap();
    let blends = e2e_blends(&pack);
    let gains_path = dir.path().join("gains.csv");
    proxy_gains(&pack, "target", &blends, &GainsProxy::default())
        .unwrap()
        .write_csv(&gains_path)
        .unwrap();
    let mut grid = Vec::new();
    for cov in ["diag", "full", "tied", "spherical"] {
        for algo in [
            serde_json::json!("gmm-kl"),
            serde_json::json!("gmm-swd"),
            serde_json::json!({"name": "sinkhorn", "max_iter": 100}),
            serde_json::json!("mmd"),
        ] {
            grid.push(serde_json::json!({"name": format!("{cov}/{}", algo.as_str().unwrap_or("sinkhorn")), "config": {"covariance": cov, "algorithm": algo}}));
        }
    }
    let grid_path = dir.path().join("grid.json");
    std::fs::write(&grid_path, serde_json::to_string(&grid).unwrap()).unwrap();
    let p = pack_dir.display().to_string();
    let g = gains_path.display().to_string();
    let gr = grid_path.display().to_string();
    let base = ["--pairs", "1024", "--baseline-pairs", "16384"];
    let json_path = dir.path().join("ablate.json");
    let jp = json_path.display().to_string();
    let (code, text) = radar(&[&["ablate", "--pack", &p, "--target", "target", "--gains", &g, "--grid", &gr, "--out", &jp][..], &base].concat());
    if code != 0 {
        return outcome(false, format!("ablate exited with {code}"));
    }
    let json_out = std::fs::read(&json_path).unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&json_out).unwrap();
    let rows = doc["rows"].as_array().cloned().unwrap_or_default();
    let mci = |name: &str| rows.iter().find(|r| r["name"] == name).and_then(|r| r["mci"].as_f64());
    let Some(best) = mci("diag/gmm-kl") else {
        return outcome(false, "no diag/gmm-kl row");
    };
    let spherical: Vec<(String, Option<f64>)> = ["gmm-kl", "gmm-swd", "sinkhorn", "mmd"]
        .iter()
        .map(|a| (format!("spherical/{a}"), mci(&format!("spherical/{a}"))))
        .collect();
    let beaten = spherical.iter().all(|(_, m)| m.is_some_and(|m| best <= m));
    let text = String::from_utf8_lossy(&text);
    let lines: Vec<&str> = text.lines().collect();
    let well_formed = rows.len() == 16
        && lines.len() == 17
        && lines[0].contains("Covariance")
        && lines[0].contains("MCI(pt)")
        && lines[1..].iter().all(|l| l.split_whitespace().count() == 12);
    let detail = spherical
        .iter()
        .map(|(n, m)| format!("{n} {:+.3}", m.unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        well_formed && beaten,
        format!("{} rows, table ok: {well_formed}; diag/gmm-kl MCI {best:+.3} vs {detail}", rows.len()),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        ("triangle", "Triangle closure", triangle_closure),
        ("ranges", "Descriptor ranges", descriptor_ranges),
        ("geodesic", "Geodesic identities", geodesic_identities),
        ("gmm", "GMM correctness", gmm_correctness),
        ("kl", "KL oracle", kl_oracle),
        ("nullity", "Divergence nullity", divergence_nullity),
        ("dpi", "TV/DPI", tv_dpi),
        ("ladder", "Severity monotonicity", severity_monotonicity),
        ("e2e", "End-to-end ranking", end_to_end),
        ("nstab", "Sample-size stability", sample_size_stability),
        ("seedstab", "Seed stability", seed_stability),
        ("determinism", "Determinism", determinism),
        ("ablation", "Ablation grid smoke", ablation_grid),
    ];
    // `cargo test -- --list` and filters from the default harness
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Option<Vec<String>> = std::env::var("ACCEPT_ONLY").ok().map(|s| s.split(',').map(String::from).collect());
    let mut failed = 0;
    for (key, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|k| k == key)) {
            continue;
        }
        let t = Instant::now();
        let r = run();
        failed += usize::from(!r.pass);
        println!(
            "{} {name}: {} [{:.1}s]",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
