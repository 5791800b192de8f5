//! Acceptance suite. Every criterion prints one PASS/FAIL line with its
//! measured values and runtime, then asserts.
//!
//! Tests take a shared lock so that runtimes are measured without
//! interference from each other.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use lmconf_core::confidence::{self, AnyModel, ConfidencePredictor, TrainOptions};
use lmconf_core::dataio::{self, make_splits, AnnotationRecord, DataError};
use lmconf_core::descriptors::{self, pca_fit, DescriptorConfig, DescriptorKind};
use lmconf_core::image::{patch_side, GrayImage};
use lmconf_core::metrics::{self, ConfidenceScore, OperatingPoint};
use lmconf_core::perturb::{perturb_individual, PerturbSpec};
use lmconf_core::pipeline;
use lmconf_core::svm::{self, KernelModel, KernelSpec, SearchGrid, SolverParams};
use lmconf_core::synth::{SynthConfig, SynthCorpus};
use lmconf_core::{Error, Landmark, LandmarkSet, Point};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration, budget: Duration) {
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    println!(
        "criterion {id:>2} {name}: {} | {detail} | {elapsed:.3?} (budget {budget:?})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
    assert!(in_time, "criterion {id} ({name}) over budget: {elapsed:?} > {budget:?}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_confidence_calibration() {
    let _g = serial();
    const SIGMA: f64 = 0.10;
    const TARGET: f64 = 0.0928;
    const TOL: f64 = 0.001;
    let t = Instant::now();
    let d = metrics::distance_for_confidence(ConfidenceScore::new(0.65).unwrap(), SIGMA).unwrap();
    let elapsed = t.elapsed();

    // bisection on the forward transform
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if metrics::confidence(mid, SIGMA).unwrap().value() > 0.65 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let pass = (d - TARGET).abs() <= TOL && (d - oracle).abs() <= 1e-12;
    verdict(
        1,
        "confidence calibration",
        pass,
        &format!("distance {:.5} of face size (oracle {oracle:.5}, target {TARGET} +- {TOL})", d),
        elapsed,
        Duration::from_millis(1),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_tradeoff_arithmetic() {
    let _g = serial();
    let (tf, tr, f) = (2.92, 20.3, 0.154);
    let t = Instant::now();
    let time = pipeline::expected_time(tf, tr, f);
    let speed = pipeline::speedup(tf, tr, f);
    let elapsed = t.elapsed();
    let oracle_time = tf + f * tr;
    let pass = (time - 6.05).abs() <= 0.01
        && (speed - 3.36).abs() <= 0.01
        && (time - oracle_time).abs() <= 1e-12
        && (speed - tr / oracle_time).abs() <= 1e-12;
    verdict(
        2,
        "trade-off arithmetic",
        pass,
        &format!("time {time:.4} s (target 6.05 +- 0.01), speedup {speed:.4}x (target 3.36 +- 0.01)"),
        elapsed,
        Duration::from_millis(1),
    );
}

// ---------------------------------------------------------------- 3

/// Exhaustive sweep: every candidate threshold is tried and retention is
/// recounted from scratch each time.
fn tc95_oracle(pred: &[f64], gt: &[f64], gt_threshold: f64, tune_frac: f64, seed: u64) -> (f64, f64) {
    let (tune, eval) = metrics::tune_split(pred.len(), tune_frac, seed);
    let mut values: Vec<f64> = tune.iter().map(|&i| pred[i]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut candidates = vec![0.0];
    for w in values.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(1.0);
    let flagged = |p: f64, t: f64| t >= 1.0 || p < t;

    let correct: Vec<usize> = tune.iter().copied().filter(|&i| gt[i] >= gt_threshold).collect();
    let mut best = f64::NEG_INFINITY;
    for &t in &candidates {
        let kept = correct.iter().filter(|&&i| !flagged(pred[i], t)).count();
        if kept * 100 >= 95 * correct.len() && t > best {
            best = t;
        }
    }
    let failures: Vec<usize> = eval.iter().copied().filter(|&i| gt[i] < gt_threshold).collect();
    let caught = failures.iter().filter(|&&i| flagged(pred[i], best)).count();
    (best, caught as f64 / failures.len() as f64)
}

#[test]
fn criterion_03_truecorrect95_oracle() {
    let _g = serial();
    const N: usize = 200;
    let op = OperatingPoint::default();
    let mut r = rng(3);
    let mut instances = Vec::new();
    for k in 0..50u64 {
        let fail_rate = r.random_range(0.15..0.5);
        let noise = Normal::new(0.0, r.random_range(0.05..0.25)).unwrap();
        let bad = Normal::new(0.35, 0.15).unwrap();
        let good = Normal::new(0.85, 0.08).unwrap();
        let coarse = k % 3 == 0;
        let (mut pred, mut gt) = (Vec::with_capacity(N), Vec::with_capacity(N));
        for _ in 0..N {
            let g: f64 = if r.random_bool(fail_rate) { bad.sample(&mut r) } else { good.sample(&mut r) };
            let g = g.clamp(0.0, 1.0);
            let mut p = (g + noise.sample(&mut r)).clamp(0.0, 1.0);
            if coarse {
                // coarse predictions produce many ties
                p = (p * 20.0).round() / 20.0;
            }
            pred.push(p);
            gt.push(g);
        }
        instances.push((pred, gt, k));
    }

    let t = Instant::now();
    let reports: Vec<_> = instances
        .iter()
        .map(|(p, g, k)| metrics::true_correct95(p, g, &op, 0.2, *k))
        .collect();
    let elapsed = t.elapsed();

    let mut mismatches = Vec::new();
    for ((p, g, k), rep) in instances.iter().zip(&reports) {
        let (thr, det) = tc95_oracle(p, g, op.gt_threshold, 0.2, *k);
        match rep {
            Ok(rep) if rep.tuned_pred_threshold == thr && rep.true_correct95 == det => {}
            Ok(rep) => mismatches.push(format!(
                "#{k}: threshold {} vs {thr}, detection {} vs {det}",
                rep.tuned_pred_threshold, rep.true_correct95
            )),
            Err(e) => mismatches.push(format!("#{k}: {e}")),
        }
    }
    verdict(
        3,
        "TrueCorrect95 oracle",
        mismatches.is_empty(),
        &format!("{} of 50 instances equal the exhaustive oracle {:?}", 50 - mismatches.len(), mismatches),
        elapsed,
        Duration::from_secs(5),
    );
}

// ---------------------------------------------------------------- 4

/// min ½ xᵀQx + pᵀx  s.t.  0 ≤ x ≤ C,  aᵀx = 0, by accelerated projected
/// gradient with restarts.
fn qp_oracle(q: &[Vec<f64>], p: &[f64], a: &[f64], c: f64) -> Vec<f64> {
    let m = p.len();
    let objective = |x: &[f64]| {
        let mut s = 0.0;
        for i in 0..m {
            let qx: f64 = (0..m).map(|j| q[i][j] * x[j]).sum();
            s += x[i] * (0.5 * qx + p[i]);
        }
        s
    };
    // Lipschitz constant by power iteration
    // an uneven start avoids the null space of structured duals
    let mut v: Vec<f64> = (0..m).map(|i| 1.0 + (i as f64 * 0.7).sin()).collect();
    let mut lip = 1.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..m).map(|i| (0..m).map(|j| q[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lip = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let mut lip = lip * 1.05 + 1e-12;

    let project = |v: &[f64]| -> Vec<f64> {
        let at = |lambda: f64| -> Vec<f64> { (0..m).map(|i| (v[i] - lambda * a[i]).clamp(0.0, c)).collect() };
        let h = |lambda: f64| -> f64 { at(lambda).iter().zip(a).map(|(x, ai)| x * ai).sum() };
        let bound = v.iter().fold(0.0f64, |b, x| b.max(x.abs())) + c + 1.0;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    };

    let mut x = vec![0.0; m];
    let mut y = x.clone();
    let mut tk = 1.0f64;
    let mut fx = objective(&x);
    for _ in 0..400_000 {
        let g: Vec<f64> = (0..m).map(|i| (0..m).map(|j| q[i][j] * y[j]).sum::<f64>() + p[i]).collect();
        let step: Vec<f64> = (0..m).map(|i| y[i] - g[i] / lip).collect();
        let xn = project(&step);
        let fxn = objective(&xn);
        if fxn > fx {
            if y == x {
                lip *= 2.0;
            }
            // restart momentum
            y = x.clone();
            tk = 1.0;
            continue;
        }
        let change = xn.iter().zip(&x).fold(0.0f64, |b, (u, w)| b.max((u - w).abs()));
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        y = (0..m).map(|i| xn[i] + (tk - 1.0) / tn * (xn[i] - x[i])).collect();
        x = xn;
        fx = fxn;
        tk = tn;
        if change < 1e-14 {
            break;
        }
    }
    x
}

/// Offset from the optimality conditions: the mean over free variables,
/// else the midpoint of the feasible interval.
fn oracle_rho(q: &[Vec<f64>], p: &[f64], a: &[f64], c: f64, x: &[f64]) -> f64 {
    let m = p.len();
    let tol = 1e-9 * c.max(1.0);
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for i in 0..m {
        let g: f64 = (0..m).map(|j| q[i][j] * x[j]).sum::<f64>() + p[i];
        let yg = a[i] * g;
        if x[i] >= c - tol {
            if a[i] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if x[i] <= tol {
            if a[i] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        0.5 * (ub + lb)
    }
}

fn kernel_value(k: &KernelSpec, u: &[f64], v: &[f64]) -> f64 {
    match *k {
        KernelSpec::Linear => u.iter().zip(v).map(|(a, b)| a * b).sum(),
        KernelSpec::Rbf { gamma: Some(g) } => (-g * u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp(),
        _ => unreachable!("oracle kernels are linear or resolved RBF"),
    }
}

struct Case {
    svr: bool,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    c: f64,
    epsilon: f64,
    kernel: KernelSpec,
    probes: Vec<Vec<f64>>,
}

fn random_case(r: &mut ChaCha8Rng, k: usize) -> Case {
    let n = r.random_range(5..=20);
    let d = r.random_range(1..=5);
    let scales: Vec<f64> = (0..d).map(|_| 10f64.powf(r.random_range(-1.0..1.5))).collect();
    let offsets: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let draw = |r: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|j| offsets[j] + scales[j] * unit.sample(r)).collect() };
    let x: Vec<Vec<f64>> = (0..n).map(|_| draw(r)).collect();
    let probes: Vec<Vec<f64>> = (0..10).map(|_| draw(r)).collect();
    let svr = k % 2 == 0;
    let lat = |row: &[f64]| -> f64 { (row[0] - offsets[0]) / scales[0] + if d > 1 { 0.5 * (row[1] - offsets[1]) / scales[1] } else { 0.0 } };
    let y: Vec<f64> = if svr {
        x.iter().map(|row| lat(row).sin() + 0.1 * unit.sample(r)).collect()
    } else {
        let mut y: Vec<f64> = x.iter().map(|row| if lat(row) + 0.5 * unit.sample(r) >= 0.0 { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        y
    };
    let kernel = match k % 3 {
        0 => KernelSpec::Linear,
        1 => KernelSpec::Rbf { gamma: Some(10f64.powf(r.random_range(-1.5..0.5))) },
        _ => KernelSpec::rbf(),
    };
    Case {
        svr,
        x,
        y,
        c: 10f64.powf(r.random_range(-1.0..1.0)),
        epsilon: r.random_range(0.01..0.3),
        kernel,
        probes,
    }
}

/// Checks one fit against the oracle; returns (objective gap, max
/// prediction gap, kkt gap).
fn check_case(case: &Case, params: &SolverParams) -> Result<(f64, f64, f64), String> {
    let model: KernelModel = if case.svr {
        svm::svr_fit(&case.x, &case.y, case.c, case.epsilon, &case.kernel, params)
    } else {
        svm::svc_fit(&case.x, &case.y, case.c, &case.kernel, params)
    }
    .map_err(|e| e.to_string())?;

    // independent population-sd standardisation
    let n = case.x.len();
    let d = case.x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| case.x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = case.x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..d {
        if (model.scaler.mean[j] - mean[j]).abs() > 1e-9 * mean[j].abs().max(1.0)
            || (model.scaler.std[j] - sd[j]).abs() > 1e-9 * sd[j]
        {
            return Err(format!("standardiser differs in dimension {j}"));
        }
    }
    let z = |row: &[f64]| -> Vec<f64> { (0..d).map(|j| (row[j] - mean[j]) / sd[j]).collect() };
    let zs: Vec<Vec<f64>> = case.x.iter().map(|r| z(r)).collect();
    let kernel = match case.kernel {
        KernelSpec::Rbf { gamma: None } => {
            let all: Vec<f64> = zs.iter().flatten().copied().collect();
            let mu = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / all.len() as f64;
            KernelSpec::Rbf { gamma: Some(if var > 0.0 { 1.0 / (d as f64 * var) } else { 1.0 }) }
        }
        k => k,
    };
    let kmat: Vec<Vec<f64>> = zs.iter().map(|u| zs.iter().map(|v| kernel_value(&kernel, u, v)).collect()).collect();

    // dual variables: [α; α*] for regression, α for classification
    let (map, a, p): (Vec<usize>, Vec<f64>, Vec<f64>) = if case.svr {
        let map = (0..n).chain(0..n).collect();
        let a = std::iter::repeat_n(1.0, n).chain(std::iter::repeat_n(-1.0, n)).collect();
        let p = case.y.iter().map(|t| case.epsilon - t).chain(case.y.iter().map(|t| case.epsilon + t)).collect();
        (map, a, p)
    } else {
        ((0..n).collect(), case.y.clone(), vec![-1.0; n])
    };
    let m = map.len();
    let q: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| a[i] * a[j] * kmat[map[i]][map[j]]).collect()).collect();
    let x = qp_oracle(&q, &p, &a, case.c);
    let obj: f64 = (0..m)
        .map(|i| x[i] * (0.5 * (0..m).map(|j| q[i][j] * x[j]).sum::<f64>() + p[i]))
        .sum();
    let rho = oracle_rho(&q, &p, &a, case.c, &x);
    let coef: Vec<f64> = (0..n)
        .map(|i| if case.svr { x[i] - x[i + n] } else { x[i] * case.y[i] })
        .collect();
    let mut pred_gap = 0.0f64;
    for probe in case.probes.iter().chain(&case.x) {
        let zp = z(probe);
        let f: f64 = (0..n).map(|i| coef[i] * kernel_value(&kernel, &zs[i], &zp)).sum::<f64>() - rho;
        pred_gap = pred_gap.max((f - model.decision(probe).unwrap()).abs());
    }
    Ok(((obj - model.meta.dual_objective).abs(), pred_gap, model.meta.kkt_gap))
}

#[test]
fn criterion_04_solver_against_qp_oracle() {
    let _g = serial();
    // Fits are run to a 1e-4 stopping gap: at the default 1e-3 the offset
    // can still move predictions by a few 1e-3.
    let tight = SolverParams {
        tolerance: 1e-4,
        ..SolverParams::default()
    };
    let mut r = rng(4);
    let cases: Vec<Case> = (0..100).map(|k| random_case(&mut r, k)).collect();
    let t = Instant::now();
    let mut failures = Vec::new();
    let (mut worst_obj, mut worst_pred, mut worst_kkt) = (0.0f64, 0.0f64, 0.0f64);
    for (k, case) in cases.iter().enumerate() {
        match check_case(case, &tight) {
            Ok((o, p, g)) => {
                worst_obj = worst_obj.max(o);
                worst_pred = worst_pred.max(p);
                worst_kkt = worst_kkt.max(g);
                if o > 1e-4 || p > 1e-3 || g > 1e-3 {
                    failures.push(format!(
                        "#{k} ({} {}): objective {o:.2e}, prediction {p:.2e}, kkt {g:.2e}",
                        if case.svr { "svr" } else { "svc" },
                        case.kernel
                    ));
                }
            }
            Err(e) => failures.push(format!("#{k}: {e}")),
        }
    }
    let elapsed = t.elapsed();
    let default_gaps: Vec<(f64, f64, f64)> = cases.iter().filter_map(|c| check_case(c, &SolverParams::default()).ok()).collect();
    let default_obj = default_gaps.iter().fold(0.0f64, |m, g| m.max(g.0));
    let default_pred = default_gaps.iter().fold(0.0f64, |m, g| m.max(g.1));
    verdict(
        4,
        "SVR/SVC solver",
        failures.is_empty(),
        &format!(
            "worst objective gap {worst_obj:.2e} (<= 1e-4), prediction gap {worst_pred:.2e} (<= 1e-3), kkt {worst_kkt:.2e} (<= 1e-3); failures {failures:?}; at the default stopping gap: objective {default_obj:.2e}, prediction {default_pred:.2e}"
        ),
        elapsed,
        Duration::from_secs(60),
    );
}

// ---------------------------------------------------------------- 5

fn random_patch(r: &mut ChaCha8Rng, side: usize, lo: f64, hi: f64, integer: bool) -> GrayImage {
    GrayImage::from_fn(side, side, |_, _| {
        let v = r.random_range(lo..hi);
        if integer {
            v.round()
        } else {
            v
        }
    })
}

fn side_for(cfg: &DescriptorConfig) -> usize {
    let margin = match cfg.kind {
        DescriptorKind::Lbp { radius } => 2 * radius,
        _ => 0,
    };
    patch_side(cfg.patch_size.fraction()) + margin
}

#[test]
fn criterion_05_descriptor_invariants() {
    let _g = serial();
    let grid = DescriptorConfig::paper_grid();
    let lbp: Vec<&DescriptorConfig> = grid.iter().filter(|c| matches!(c.kind, DescriptorKind::Lbp { .. })).collect();
    let gradient: Vec<&DescriptorConfig> = grid.iter().filter(|c| !matches!(c.kind, DescriptorKind::Lbp { .. })).collect();
    let mut r = rng(5);
    let t = Instant::now();

    let mut lbp_ok = 0;
    for _ in 0..100 {
        let cfg = lbp[r.random_range(0..lbp.len())];
        let patch = random_patch(&mut r, side_for(cfg), 0.0, 255.0, true);
        let gamma = 10f64.powf(r.random_range(-0.5..0.5));
        let offset = r.random_range(0.0..60.0);
        let gain = r.random_range(0.2..1.0);
        let remapped = patch.map(|v| offset + gain * (255.0 - offset) * (v / 255.0).powf(gamma));
        if descriptors::describe(&patch, cfg).unwrap() == descriptors::describe(&remapped, cfg).unwrap() {
            lbp_ok += 1;
        }
    }

    let mut worst_shift = 0.0f64;
    for _ in 0..100 {
        let cfg = gradient[r.random_range(0..gradient.len())];
        let patch = random_patch(&mut r, side_for(cfg), 60.0, 195.0, false);
        let shift = r.random_range(-50.0..50.0);
        let a = descriptors::describe(&patch, cfg).unwrap();
        let b = descriptors::describe(&patch.map(|v| v + shift), cfg).unwrap();
        worst_shift = a.iter().zip(&b).fold(worst_shift, |w, (x, y)| w.max((x - y).abs()));
    }

    let mut dim_errors = Vec::new();
    for cfg in &grid {
        let cells = cfg.cells_per_side * cfg.cells_per_side;
        let expected = match cfg.kind {
            DescriptorKind::Hog { orientations } => cells * orientations,
            DescriptorKind::Lbp { .. } => cells * 10,
            DescriptorKind::Sift => cells * 4 * 4 * 8,
        };
        let patch = random_patch(&mut r, side_for(cfg), 0.0, 255.0, false);
        let got = descriptors::describe(&patch, cfg).unwrap().len();
        if got != expected || cfg.dim() != expected {
            dim_errors.push(format!("{cfg}: {got} vs {expected}"));
        }
    }
    let elapsed = t.elapsed();
    // 4 sizes x 4 cell counts x (2 HoG + 4 LBP + 1 SIFT)
    let pass = lbp_ok == 100 && worst_shift <= 1e-9 && dim_errors.is_empty() && grid.len() == 112;
    verdict(
        5,
        "descriptor invariants",
        pass,
        &format!(
            "LBP remap-invariant {lbp_ok}/100, HoG/SIFT shift deviation {worst_shift:.1e} (<= 1e-9), {} grid configurations, dimension errors {dim_errors:?}",
            grid.len()
        ),
        elapsed,
        Duration::from_secs(30),
    );
}

// ---------------------------------------------------------------- 6

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (as columns of `v`).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let total: f64 = a.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-30 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[test]
fn criterion_06_pca_against_gram_oracle() {
    let _g = serial();
    const N: usize = 50;
    const D: usize = 2048;
    let mut r = rng(6);
    let unit = Normal::new(0.0, 1.0).unwrap();
    // anisotropic data so the spectrum is well spread
    let scale: Vec<f64> = (0..D).map(|j| 1.0 + 3.0 * (-(j as f64) / 300.0).exp()).collect();
    let x: Vec<Vec<f64>> = (0..N).map(|_| (0..D).map(|j| 2.0 + scale[j] * unit.sample(&mut r)).collect()).collect();

    let t = Instant::now();
    let model = pca_fit(&x, N - 1).unwrap();
    let k = model.k();
    let mut ortho = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let dot: f64 = model.component(i).iter().zip(model.component(j)).map(|(a, b)| a * b).sum();
            ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let ranks = [1usize, 2, 5, 10, 25, N - 1];
    let residual = |m: &lmconf_core::descriptors::PcaModel, row: &[f64]| -> f64 {
        let back = m.reconstruct(&m.project(row).unwrap()).unwrap();
        row.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum()
    };
    let lib: Vec<Vec<f64>> = ranks
        .iter()
        .map(|&kk| {
            let m = model.truncated(kk);
            x.iter().map(|row| residual(&m, row)).collect()
        })
        .collect();
    let elapsed = t.elapsed();

    // oracle: eigendecomposition of the centred Gram matrix
    let mean: Vec<f64> = (0..D).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / N as f64).collect();
    let xc: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let gram: Vec<Vec<f64>> = xc.iter().map(|a| xc.iter().map(|b| a.iter().zip(b).map(|(u, v)| u * v).sum()).collect()).collect();
    let (vals, vecs) = jacobi_eigen(gram.clone());
    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    let mut worst = 0.0f64;
    for (ri, &kk) in ranks.iter().enumerate() {
        for i in 0..N {
            let captured: f64 = order[..kk].iter().map(|&e| vals[e] * vecs[i][e] * vecs[i][e]).sum();
            let oracle = gram[i][i] - captured;
            worst = worst.max((oracle - lib[ri][i]).abs());
        }
    }
    let pass = k == N - 1 && ortho <= 1e-8 && worst <= 1e-6;
    verdict(
        6,
        "PCA",
        pass,
        &format!("{k} components, orthonormality error {ortho:.1e} (<= 1e-8), residual deviation {worst:.1e} (<= 1e-6) over ranks {ranks:?}"),
        elapsed,
        Duration::from_secs(30),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_perturbation_statistics() {
    let _g = serial();
    const FACE: f64 = 128.0;
    const DRAWS: usize = 100_000;
    let origin = Point::new(300.0, 200.0);
    let gt = LandmarkSet::from_pairs([(Landmark::EyeL, origin)]);
    let spec = PerturbSpec {
        replicas_per_face: DRAWS,
        ..PerturbSpec::individual(7)
    };
    let t = Instant::now();
    let reps = perturb_individual(&gt, &spec, FACE);
    let elapsed_draw = t.elapsed();

    let sigma = 0.10 * FACE;
    let mut sum = 0.0;
    let mut bins = [0usize; 36];
    for rep in &reps {
        let p = rep.landmarks.get(Landmark::EyeL).unwrap();
        let (dx, dy) = (p.x - origin.x, p.y - origin.y);
        sum += dx.hypot(dy);
        let angle = dy.atan2(dx).rem_euclid(TAU);
        bins[((angle / TAU * 36.0) as usize).min(35)] += 1;
    }
    let mean = sum / DRAWS as f64;
    let expected = sigma * (2.0 / PI).sqrt();
    let e = DRAWS as f64 / 36.0;
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let p_value = 1.0 - ChiSquared::new(35.0).unwrap().cdf(chi2);
    let elapsed = t.elapsed();
    let rel = (mean - expected).abs() / expected;
    let pass = reps.len() == DRAWS && rel <= 0.01 && p_value > 0.01;
    verdict(
        7,
        "perturbation statistics",
        pass,
        &format!(
            "mean displacement {mean:.4} px vs {expected:.4} (rel. error {rel:.2e} <= 1e-2), angular chi2 {chi2:.1} p = {p_value:.3} (> 0.01); drawing took {elapsed_draw:.2?}"
        ),
        elapsed,
        Duration::from_secs(10),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_synthetic_failure_detection() {
    let _g = serial();
    let t = Instant::now();
    let corpus = SynthCorpus::generate(&SynthConfig {
        n_faces: 500,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let records = corpus.records();
    let images = corpus.images();
    let split = make_splits(&records, 1, None).unwrap();
    let train = confidence::select_records(&records, &split.train_ids);
    let held_ids: Vec<String> = split.val_ids.iter().chain(&split.test_ids).cloned().collect();
    let held = confidence::select_records(&records, &held_ids);
    let op = OperatingPoint::default();
    let rbf_only = |mut o: TrainOptions| {
        o.grid.kernels = vec![KernelSpec::rbf()];
        o
    };

    // every landmark uses its best descriptors from the AFLW table
    let table = confidence::presets::paper_aflw();
    let eye = confidence::train_individual(&train, &images, Landmark::EyeL, &table[&Landmark::EyeL], &rbf_only(TrainOptions::individual(1))).unwrap();
    confidence::check_disjoint(&eye.trained_on, &held_ids).unwrap();
    let scored = confidence::score_perturbed(&eye, &held, &images, &PerturbSpec::individual(99), op.sigma).unwrap();
    let eye_tc = confidence::evaluate(&scored, &op, 0.2, 3).unwrap().true_correct95;

    let subset = confidence::DEFAULT_JOINT_SUBSET;
    let joint_tc = |landmarks: &[Landmark]| -> f64 {
        let parts: Vec<(Landmark, Vec<DescriptorConfig>)> = landmarks.iter().map(|&l| (l, table[&l].clone())).collect();
        let model = confidence::train_joint(&train, &images, &parts, &rbf_only(TrainOptions::superposed(1))).unwrap();
        confidence::check_disjoint(&model.trained_on, &held_ids).unwrap();
        let scored = confidence::score_perturbed(&model, &held, &images, &PerturbSpec::superposed(99), op.sigma).unwrap();
        confidence::evaluate(&scored, &op, 0.2, 3).unwrap().true_correct95
    };
    let singles: Vec<(Landmark, f64)> = subset.iter().map(|&l| (l, joint_tc(&[l]))).collect();
    let triple = joint_tc(&subset);
    let elapsed = t.elapsed();

    let best = singles.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let pass = eye_tc >= 0.40 && triple >= best - 0.05;
    verdict(
        8,
        "synthetic failure detection",
        pass,
        &format!(
            "eye model TrueCorrect95 {eye_tc:.3} (>= 0.40); joint {} {triple:.3} vs singletons {singles:?} (>= best - 0.05 = {:.3})",
            subset.iter().map(|l| l.name()).collect::<Vec<_>>().join("+"),
            best - 0.05
        ),
        elapsed,
        Duration::from_secs(600),
    );
}

// ---------------------------------------------------------------- 9

fn small_options(seed: u64) -> TrainOptions {
    let mut o = TrainOptions::individual(seed);
    o.grid = SearchGrid {
        c_values: vec![0.5],
        epsilon_values: vec![0.05],
        kernels: vec![KernelSpec::rbf()],
        folds: 3,
    };
    o
}

/// Trains and scores a small model; returns the encoded model and the
/// bit patterns of its held-out predictions.
fn library_run(records: &[AnnotationRecord], corpus: &SynthCorpus, seed: u64) -> (Vec<u8>, Vec<u64>) {
    let split = make_splits(records, seed, None).unwrap();
    let train = confidence::select_records(records, &split.train_ids);
    let test = confidence::select_records(records, &split.test_ids);
    let images = corpus.images();
    let cfg: Vec<DescriptorConfig> = vec!["hog:2/8:2:8".parse().unwrap()];
    let model = confidence::train_individual(&train, &images, Landmark::EyeL, &cfg, &small_options(seed)).unwrap();
    let scored = confidence::score_perturbed(&model, &test, &images, &PerturbSpec::individual(seed + 1), 0.1).unwrap();
    let bytes = dataio::encode_bundle(&AnyModel::Individual(model).to_bundle());
    (bytes, scored.predicted.iter().map(|v| v.to_bits()).collect())
}

fn snapshot(dir: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// The `lmconf` binary next to this test executable, if it was built.
fn cli_binary() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let p = exe.parent()?.parent()?.join(format!("lmconf{}", std::env::consts::EXE_SUFFIX));
    p.exists().then_some(p)
}

/// Runs every data-producing subcommand with 1 and 8 threads, then reruns
/// each from its resolved configuration; returns mismatching steps.
fn cli_reruns(bin: &Path, root: &Path) -> Vec<String> {
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).env("LS_LOG", "error").output().unwrap();
        assert!(out.status.success(), "lmconf {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let grid = root.join("grid.toml");
    std::fs::write(&grid, "[svr]\nc_values = [0.5]\nepsilon_values = [0.05]\nkernels = [\"rbf\"]\nfolds = 3\n").unwrap();
    let corpus = root.join("corpus");
    let ann = corpus.join("annotations.json");
    let split = root.join("split-1").join("split.json");
    let model = root.join("train-individual-1").join("model_eyeL.lmc");
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["--n".into(), "100".into(), "--seed".into(), "5".into()]),
        ("split", vec!["--annotations".into(), s(&ann), "--seed".into(), "5".into()]),
        (
            "train-individual",
            vec!["--config".into(), s(&grid), "--annotations".into(), s(&ann), "--split".into(), s(&split), "--landmarks".into(), "eyeL".into()],
        ),
        ("eval", vec!["--config".into(), s(&grid), "--annotations".into(), s(&ann), "--split".into(), s(&split), "--model".into(), s(&model)]),
        ("tradeoff", vec!["--config".into(), s(&grid), "--annotations".into(), s(&ann), "--split".into(), s(&split), "--model".into(), s(&model)]),
    ];
    let mut bad = Vec::new();
    for (cmd, args) in &steps {
        let dirs: Vec<PathBuf> = ["1", "8", "rerun"].iter().map(|t| root.join(format!("{cmd}-{t}"))).collect();
        for (threads, dir) in [("1", &dirs[0]), ("8", &dirs[1])] {
            let mut a: Vec<&str> = vec![cmd, "--threads", threads, "--out"];
            let d = s(dir);
            a.push(&d);
            a.extend(args.iter().map(String::as_str));
            run(&a);
        }
        let cfg = s(&dirs[0].join("run_config.toml"));
        let d = s(&dirs[2]);
        run(&[cmd, "--config", &cfg, "--threads", "8", "--out", &d]);
        let (a, b, c) = (snapshot(&dirs[0]), snapshot(&dirs[1]), snapshot(&dirs[2]));
        if a != b || a != c {
            bad.push(cmd.to_string());
        }
        if *cmd == "synth" {
            std::fs::rename(&dirs[0], &corpus).unwrap();
        }
    }
    bad
}

#[test]
fn criterion_09_splits_and_determinism() {
    let _g = serial();
    let t = Instant::now();
    let corpus = SynthCorpus::generate(&SynthConfig {
        n_faces: 100,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let records = corpus.records();
    let m = make_splits(&records, 9, None).unwrap();
    let mut all: Vec<&String> = m.train_ids.iter().chain(&m.val_ids).chain(&m.test_ids).collect();
    let sizes = (m.train_ids.len(), m.val_ids.len(), m.test_ids.len());
    all.sort();
    all.dedup();
    let split_ok = sizes == (80, 10, 10) && all.len() == 100;

    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| library_run(&records, &corpus, 9))
    };
    let one = in_pool(1);
    let eight = in_pool(8);
    let library_ok = one == eight && !one.1.is_empty();

    let (cli_ok, cli_note) = match cli_binary() {
        Some(bin) => {
            let dir = tempfile::tempdir().unwrap();
            let bad = cli_reruns(&bin, dir.path());
            (bad.is_empty(), format!("CLI synth/split/train-individual/eval/tradeoff reruns mismatching: {bad:?}"))
        }
        None => (true, "lmconf binary not built; CLI reruns covered by the cli crate tests".to_string()),
    };
    let elapsed = t.elapsed();
    verdict(
        9,
        "split hygiene and determinism",
        split_ok && library_ok && cli_ok,
        &format!(
            "split sizes {sizes:?}, {} distinct ids; library 1 vs 8 threads identical: {library_ok}; {cli_note}",
            all.len()
        ),
        elapsed,
        Duration::from_secs(120),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_container_round_trip() {
    let _g = serial();
    let corpus = SynthCorpus::generate(&SynthConfig {
        n_faces: 80,
        seed: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let records = corpus.records();
    let images = corpus.images();
    // 2048-dimensional SIFT, so the bundle carries a PCA projection too
    let cfg: Vec<DescriptorConfig> = vec!["sift:2/8:4".parse().unwrap()];
    let trained = confidence::train_individual(&records, &images, Landmark::NoseC, &cfg, &small_options(10)).unwrap();
    assert!(trained.pca.is_some());
    let model = AnyModel::Individual(trained);

    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lmc");
    confidence::save_model(&path, &model).unwrap();
    let loaded = confidence::load_model(&path).unwrap();

    let mut r = rng(10);
    let mut identical = 0;
    for _ in 0..100 {
        let rec = &records[r.random_range(0..records.len())];
        let image = lmconf_core::confidence::ImageSource::image(&images, rec).unwrap();
        let moved = rec.landmarks.map(|_, p| Point::new(p.x + r.random_range(-8.0..8.0), p.y + r.random_range(-8.0..8.0)));
        let a = model.predict(&image, &moved).map(|c| c.value().to_bits());
        let b = loaded.predict(&image, &moved).map(|c| c.value().to_bits());
        match (a, b) {
            (Ok(x), Ok(y)) if x == y => identical += 1,
            (Err(x), Err(y)) if x.kind() == y.kind() => identical += 1,
            _ => {}
        }
    }

    let bytes = std::fs::read(&path).unwrap();
    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| -> Result<(), Error> {
        let mut b = bytes.clone();
        f(&mut b);
        let p = dir.path().join("corrupt.lmc");
        std::fs::write(&p, &b).unwrap();
        confidence::load_model(&p).map(|_| ())
    };
    let flipped = corrupt(&|b| {
        let last = b.len() - 1;
        b[last] ^= 0x5a;
    });
    let truncated = corrupt(&|b| b.truncate(b.len() - 9));
    let bad_magic = corrupt(&|b| b[0] = b'X');
    let future = dataio::decode_bundle(&dataio::encode_with_version(&model.to_bundle(), "2.0"));
    let elapsed = t.elapsed();

    let typed = matches!(flipped, Err(Error::Data(DataError::ChecksumMismatch { .. })))
        && matches!(truncated, Err(Error::Data(DataError::MalformedContainer(_))))
        && matches!(bad_magic, Err(Error::Data(DataError::MalformedContainer(_))))
        && matches!(future, Err(DataError::VersionMismatch { .. }));
    verdict(
        10,
        "model container round trip",
        identical == 100 && typed,
        &format!(
            "{identical}/100 predictions bitwise identical; flipped byte -> {}, truncated -> {}, bad magic -> {}, version 2.0 -> {}",
            flipped.err().map_or("accepted", |e| e.kind()),
            truncated.err().map_or("accepted", |e| e.kind()),
            bad_magic.err().map_or("accepted", |e| e.kind()),
            future.err().map_or("accepted", |e| e.kind()),
        ),
        elapsed,
        Duration::from_secs(10),
    );
}
