//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the summary is always printed. The process
//! fails when a criterion fails that is not listed in `KNOWN_FAILURES`, or when a listed one
//! unexpectedly passes. Set `WSM_ACCEPTANCE_STRICT=1` to fail on any FAIL line.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsm_core::config::RunConfig;
use wsm_core::curvature;
use wsm_core::experiment::{self, SweepSettings};
use wsm_core::expfam::{family_from_angle, sweep_grid, SweepConfig};
use wsm_core::flow::{self, FlowParams};
use wsm_core::geodesic::{self, GeodesicParams};
use wsm_core::ground_metric::{laplacian, laplacian_pinv};
use wsm_core::inequalities::{self, InequalityKind};
use wsm_core::manifold;
use wsm_core::report::SweepRow;
use wsm_core::{Distribution, Graph, StatisticalModel};

/// Criteria expected to fail, with the reason printed next to the FAIL line.
const KNOWN_FAILURES: &[(usize, &str)] = &[(
    4,
    "the three-sample estimator K is biased low by (1 - exp(-2rT))/(2rT) against the local decay rate r, \
     so rows whose slowest trajectory decays at about kappa report K < kappa",
)];

const SHIPPED: &[(&str, &str)] = &[
    ("expfam_k3", include_str!("../../../configs/expfam_k3.json")),
    ("expfam_path", include_str!("../../../configs/expfam_path.json")),
    ("expfam_skew", include_str!("../../../configs/expfam_skew.json")),
    ("simplex3", include_str!("../../../configs/simplex3.json")),
    ("hwi_negative", include_str!("../../../configs/hwi_negative.json")),
];

const SWEEP: &str = include_str!("../../../configs/sweep.json");

struct Shipped {
    name: &'static str,
    cfg: RunConfig,
    model: StatisticalModel,
    graph: Graph,
    q: Distribution,
}

fn shipped() -> Vec<Shipped> {
    SHIPPED
        .iter()
        .map(|(name, text)| {
            let cfg = RunConfig::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let model = cfg.build_model().unwrap();
            let graph = cfg.build_graph().unwrap();
            let q = cfg.build_q(model.n_states()).unwrap();
            Shipped { name, cfg, model, graph, q }
        })
        .collect()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random_point(rng: &mut ChaCha8Rng, model: &StatisticalModel) -> Vec<f64> {
    let d = model.domain();
    d.theta_min.iter().zip(&d.theta_max).map(|(a, b)| rng.gen_range(*a..=*b)).collect()
}

fn fro(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

// 1. Laplacian suite -------------------------------------------------------------------------

fn random_connected_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.gen_range(2..=8);
    let mut edges = Vec::new();
    // random spanning tree, then extra edges
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((i, j, rng.gen_range(0.1..2.0)));
    }
    for i in 0..n {
        for j in 0..i {
            if !edges.iter().any(|&(a, b, _)| (a, b) == (i, j)) && rng.gen_bool(0.3) {
                edges.push((i, j, rng.gen_range(0.1..2.0)));
            }
        }
    }
    Graph::new(n, &edges).unwrap()
}

fn random_interior(rng: &mut ChaCha8Rng, n: usize) -> Distribution {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Distribution::from_slice(&raw.iter().map(|x| x / s).collect::<Vec<_>>()).unwrap()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tol = 1e-10;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let g = random_connected_graph(&mut rng);
        let p = random_interior(&mut rng, g.n());
        let n = g.n();
        let l = laplacian(&g, &p);
        let lp = laplacian_pinv(&g, &p).unwrap();
        let scale = fro(&l).max(1.0);
        let pscale = fro(&lp).max(1.0);
        let eig = SymmetricEigen::new(l.clone());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let ones = DVector::from_element(n, 1.0);
        let checks = [
            ("symmetric", fro(&(&l - l.transpose())) / scale),
            ("psd", (-ev[0]).max(0.0) / scale),
            ("L1 = 0", (&l * &ones).norm() / scale),
            ("kernel dim 1", if n > 1 && ev[1] > tol * ev[n - 1] { 0.0 } else { 1.0 }),
            ("L L+ L = L", fro(&(&l * &lp * &l - &l)) / scale),
            ("L+ L L+ = L+", fro(&(&lp * &l * &lp - &lp)) / pscale),
            ("(L L+)' = L L+", fro(&((&l * &lp).transpose() - &l * &lp))),
            ("(L+ L)' = L+ L", fro(&((&lp * &l).transpose() - &lp * &l))),
        ];
        for (name, err) in checks {
            worst = worst.max(err);
            if !(err <= tol) {
                return verdict(false, format!("case {case} (n = {n}): {name} off by {err:e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(5);
    verdict(fast, format!("100 cases, worst relative residual {worst:.1e}, {elapsed:.2?} (limit 5 s)"))
}

// 2. Pullback consistency --------------------------------------------------------------------

fn criterion_2() -> Verdict {
    let cases = shipped();
    let s = cases.iter().find(|s| s.name == "simplex3").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let theta = random_point(&mut rng, &s.model);
        let a = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let g = manifold::metric_w(&s.model, &s.graph, &theta).unwrap().matrix;
        let chart = (a.transpose() * &g * &a)[(0, 0)];
        // σ = (a_1, a_2, −a_1 − a_2); L† from an eigendecomposition of L
        let sigma = DVector::from_vec(vec![a[0], a[1], -a[0] - a[1]]);
        let p = s.model.distribution(&theta).unwrap();
        let eig = SymmetricEigen::new(laplacian(&s.graph, &p));
        let mut pinv = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let lam = eig.eigenvalues[k];
            if lam > 1e-12 {
                let v = eig.eigenvectors.column(k);
                pinv += v * v.transpose() / lam;
            }
        }
        let direct = (sigma.transpose() * pinv * &sigma)[(0, 0)];
        worst = worst.max((chart - direct).abs());
    }
    verdict(worst <= 1e-10, format!("50 directions, worst |aᵀG_W a − σᵀL†σ| = {worst:.1e} (tol 1e-10)"))
}

// 3. Gradient and Hessian fidelity ------------------------------------------------------------

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    let mut where_hess = String::new();
    for s in shipped() {
        let d = s.model.dim();
        for _ in 0..20 {
            let theta = random_point(&mut rng, &s.model);
            let grad = manifold::kl_grad(&s.model, &theta, &s.q).unwrap();
            for k in 0..d {
                let e = 1e-5;
                let mut tp = theta.clone();
                tp[k] += e;
                let mut tm = theta.clone();
                tm[k] -= e;
                let fd = (manifold::kl(&s.model.eval_interior(&tp).unwrap(), &s.q)
                    - manifold::kl(&s.model.eval_interior(&tm).unwrap(), &s.q))
                    / (2.0 * e);
                worst_grad = worst_grad.max((grad[k] - fd).abs());
            }
            // unit-speed direction
            let raw = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let g = manifold::metric_w(&s.model, &s.graph, &theta).unwrap().matrix;
            let a: Vec<f64> = (&raw / (raw.transpose() * &g * &raw)[(0, 0)].sqrt()).iter().copied().collect();
            let quad = curvature::riw_quadratic_form(&s.model, &s.graph, &theta, &s.q, &a).unwrap();
            let fd = curvature::kl_second_derivative_along_geodesic(&s.model, &s.graph, &theta, &a, &s.q, 1e-3)
                .unwrap();
            let rel = (quad - fd).abs() / quad.abs().max(fd.abs());
            if rel > worst_hess {
                worst_hess = rel;
                where_hess = format!("{} at {theta:?}", s.name);
            }
        }
    }
    verdict(
        worst_grad <= 1e-6 && worst_hess <= 1e-3,
        format!(
            "5 models x 20 samples: worst gradient error {worst_grad:.1e} (tol 1e-6), \
             worst Hessian relative error {worst_hess:.1e} (tol 1e-3, {where_hess})"
        ),
    )
}

// 4. κ ≤ K on the sweep ----------------------------------------------------------------------

fn sweep_config() -> (SweepConfig, SweepSettings) {
    let cfg = RunConfig::from_json(SWEEP).unwrap();
    (cfg.sweep.clone(), cfg.sweep_settings())
}

fn criterion_4(rows: &[SweepRow], elapsed: Duration) -> (Verdict, Verdict) {
    let failed = rows.iter().filter(|r| !r.succeeded()).count();
    let violations: Vec<&SweepRow> = rows.iter().filter(|r| r.bound_holds() != Some(true)).collect();
    let worst = rows
        .iter()
        .filter_map(|r| Some(r.kappa? - r.k?))
        .fold(f64::NEG_INFINITY, f64::max);
    let fast = elapsed < Duration::from_secs(600);
    let main = verdict(
        rows.len() == 300 && failed == 0 && violations.is_empty() && fast,
        format!(
            "{} rows, {failed} errors, {} rows with kappa > K + 1e-6 (worst kappa - K = {worst:.3}), {elapsed:.1?}",
            rows.len(),
            violations.len()
        ),
    );
    let log_violations = rows
        .iter()
        .filter(|r| match (r.kappa, r.k_log) {
            (Some(a), Some(b)) => a > b + 1e-6,
            _ => true,
        })
        .count();
    let supplement = verdict(
        log_violations == 0,
        format!("log-ratio estimate K_log: {log_violations} rows with kappa > K_log + 1e-6"),
    );
    (main, supplement)
}

// 5. Exponential decay -----------------------------------------------------------------------

fn criterion_5(rows: &[SweepRow], config: &SweepConfig, settings: &SweepSettings) -> Verdict {
    let cells = experiment::plan(config).unwrap();
    let q = config.q.resolve(3).unwrap();
    let [a, b] = config.theta_domain;
    let params = FlowParams::euler(settings.h);
    let mut checked = 0;
    let mut samples = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for (cell, row) in cells.iter().zip(rows) {
        let Some(kappa) = row.kappa.filter(|k| *k > 0.0) else { continue };
        checked += 1;
        let model = cell.family.model(a, b).unwrap();
        let seeds = vec![vec![a], vec![0.5 * (a + b)], vec![b]];
        let star = inequalities::find_minimizer(&model, &cell.graph, &q, &seeds, Some(kappa)).unwrap();
        for theta0 in model.domain().uniform_grid(settings.initials_per_dim) {
            let traj = flow::fpe_trajectory(&model, &cell.graph, &theta0, &q, &params, 1.0).unwrap();
            let e0 = traj.samples[0].kl - star.kl;
            for s in &traj.samples {
                let excess = (s.kl - star.kl) - (-2.0 * kappa * s.t).exp() * e0;
                worst = worst.max(excess);
                samples += 1;
            }
        }
    }
    verdict(
        worst <= 1e-6 && checked > 0,
        format!(
            "{checked} configs with kappa > 0, {samples} samples on [0, 1]: \
             max of KL - KL* - exp(-2 kappa t)(KL0 - KL*) = {worst:.1e} (tol 1e-6)"
        ),
    )
}

// 6. Asymptotic rate at θ* -------------------------------------------------------------------

fn criterion_6() -> Verdict {
    let graph = Graph::triangle([0.5, 0.5, 0.0]).unwrap();
    let q = Distribution::uniform(3);
    let angles = wsm_core::expfam::sweep_angles(30);
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for idx in [0, 6, 12, 18, 24] {
        let model = family_from_angle(angles[idx]).unwrap().model(-1.0, 1.0).unwrap();
        let star = inequalities::find_minimizer(&model, &graph, &q, &[vec![-0.5], vec![0.5]], None).unwrap();
        let lam = curvature::lambda_min(&model, &graph, &star.theta, &q).unwrap();
        let h = 1e-3;
        let t_end = (1.3 * (1e10f64).ln() / (2.0 * lam) / h).ceil() * h;
        for offset in [-0.05, 0.05] {
            let theta0 = [star.theta[0] + offset];
            let traj = flow::fpe_trajectory(&model, &graph, &theta0, &q, &FlowParams::euler(h), t_end).unwrap();
            let Some(rate) = flow::fitted_decay_exponent(&traj, star.kl, 1e-9, 1e-3) else {
                return verdict(false, format!("family {idx}: too few samples in the fit window"));
            };
            let rel = (rate - 2.0 * lam).abs() / (2.0 * lam);
            worst = worst.max(rel);
        }
        lines.push(format!("{idx}: 2λ = {:.4}", 2.0 * lam));
    }
    verdict(
        worst <= 0.05,
        format!("families {}; worst relative deviation of fitted exponent {worst:.2e} (tol 5%)", lines.join(", ")),
    )
}

// 7. Geodesic convexity ----------------------------------------------------------------------

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ts: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let mut worst = f64::INFINITY;
    let mut at = String::new();
    for s in shipped() {
        let grid = s.model.domain().uniform_grid(s.cfg.grid_points);
        let kappa = curvature::ricci_lower_bound(&s.model, &s.graph, &s.q, &grid).unwrap().kappa;
        for _ in 0..20 {
            let t0 = random_point(&mut rng, &s.model);
            let t1 = random_point(&mut rng, &s.model);
            let res = match curvature::convexity_check(&s.model, &s.graph, &t0, &t1, &s.q, kappa, &ts) {
                Ok(r) => r,
                Err(e) => return verdict(false, format!("{}: {t0:?} -> {t1:?}: {e}", s.name)),
            };
            let m = res.iter().copied().fold(f64::INFINITY, f64::min);
            if m < worst {
                worst = m;
                at = s.name.to_string();
            }
        }
    }
    verdict(worst >= -1e-6, format!("5 configs x 20 pairs x 11 t: min residual {worst:.1e} ({at}, tol -1e-6)"))
}

// 8. Functional inequalities -----------------------------------------------------------------

struct InequalityTally {
    configs: usize,
    points: usize,
    failures: usize,
    flagged: usize,
    min_slack: f64,
}

fn tally_inequalities(
    tally: &mut InequalityTally,
    model: &StatisticalModel,
    graph: &Graph,
    q: &Distribution,
    kappa: f64,
    grid: &[Vec<f64>],
    kinds: &[InequalityKind],
) -> Result<(), String> {
    let seeds = model.domain().corners();
    let star = inequalities::find_minimizer(model, graph, q, &seeds, Some(kappa)).map_err(|e| e.to_string())?;
    let rows = inequalities::check_grid(model, graph, q, kappa, &star, grid, kinds, &GeodesicParams::default())
        .map_err(|e| e.to_string())?;
    tally.configs += 1;
    tally.points += grid.len();
    for r in rows {
        tally.failures += r.is_failure() as usize;
        tally.flagged += r.flagged as usize;
        if !r.flagged {
            tally.min_slack = tally.min_slack.min(r.slack);
        }
    }
    Ok(())
}

fn criterion_8(rows: &[SweepRow], config: &SweepConfig) -> Verdict {
    let positive_kinds = [InequalityKind::LogSobolev, InequalityKind::Talagrand, InequalityKind::Hwi];
    let mut pos = InequalityTally { configs: 0, points: 0, failures: 0, flagged: 0, min_slack: f64::INFINITY };
    let mut neg = InequalityTally { configs: 0, points: 0, failures: 0, flagged: 0, min_slack: f64::INFINITY };
    for s in shipped() {
        let grid = s.model.domain().uniform_grid(41);
        let kappa = curvature::ricci_lower_bound(&s.model, &s.graph, &s.q, &grid).unwrap().kappa;
        let result = if kappa > 0.0 {
            tally_inequalities(&mut pos, &s.model, &s.graph, &s.q, kappa, &grid, &positive_kinds)
        } else {
            tally_inequalities(&mut neg, &s.model, &s.graph, &s.q, kappa, &grid, &[InequalityKind::Hwi])
        };
        if let Err(e) = result {
            return verdict(false, format!("{}: {e}", s.name));
        }
    }
    let cells = experiment::plan(config).unwrap();
    let q = config.q.resolve(3).unwrap();
    let [a, b] = config.theta_domain;
    for (cell, row) in cells.iter().zip(rows) {
        let Some(kappa) = row.kappa.filter(|k| *k > 0.0) else { continue };
        let model = cell.family.model(a, b).unwrap();
        let grid = model.domain().uniform_grid(41);
        if let Err(e) = tally_inequalities(&mut pos, &model, &cell.graph, &q, kappa, &grid, &positive_kinds) {
            return verdict(false, format!("family {} omega {:?}: {e}", cell.family_index, cell.omega));
        }
    }
    verdict(
        pos.failures == 0 && neg.failures == 0 && neg.configs > 0,
        format!(
            "kappa > 0: {} configs, {} points, {} failures, {} flagged, min slack {:.1e}; \
             kappa < 0 (HWI): {} configs, {} failures, {} flagged, min slack {:.1e}",
            pos.configs,
            pos.points,
            pos.failures,
            pos.flagged,
            pos.min_slack,
            neg.configs,
            neg.failures,
            neg.flagged,
            neg.min_slack
        ),
    )
}

// 9. Geodesic self-convergence and metric axioms ---------------------------------------------

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p64 = GeodesicParams::with_segments(64);
    let p128 = GeodesicParams::with_segments(128);
    let (mut conv, mut sym, mut tri) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for s in shipped().iter().filter(|s| s.name == "expfam_skew" || s.name == "simplex3") {
        let dist = |a: &[f64], b: &[f64], p: &GeodesicParams| {
            geodesic::distance_w_with(&s.model, &s.graph, a, b, p).unwrap()
        };
        for _ in 0..50 {
            let (x, y, z) = (
                random_point(&mut rng, &s.model),
                random_point(&mut rng, &s.model),
                random_point(&mut rng, &s.model),
            );
            let dxy = dist(&x, &y, &p64);
            conv = conv.max((dxy - dist(&x, &y, &p128)).abs() / dxy);
            sym = sym.max((dxy - dist(&y, &x, &p64)).abs());
            let (dyz, dxz) = (dist(&y, &z, &p64), dist(&x, &z, &p64));
            tri = tri.max(dxz - dxy - dyz);
        }
    }
    verdict(
        conv <= 1e-3 && sym <= 1e-6 && tri <= 1e-6,
        format!(
            "2 models x 50 pairs/triples: N=64 vs 128 relative {conv:.1e} (tol 1e-3), \
             asymmetry {sym:.1e}, triangle excess {tri:.1e} (tol 1e-6)"
        ),
    )
}

// 10. Nested domains -------------------------------------------------------------------------

fn criterion_10() -> Verdict {
    let q = Distribution::uniform(3);
    // grids with common spacing 0.025 so the smaller ones are subsets of the larger
    let domains = [(-0.5, 41), (-1.0, 81), (-4.0, 321)];
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let cells = sweep_grid();
    for cell in &cells {
        let mut kappas = Vec::new();
        for &(a, points) in &domains {
            let model = cell.family.model(a, -a).unwrap();
            let grid = model.domain().uniform_grid(points);
            kappas.push(curvature::ricci_lower_bound(&model, &cell.graph, &q, &grid).unwrap().kappa);
        }
        for w in kappas.windows(2) {
            worst = worst.max(w[1] - w[0]);
            if w[1] > w[0] + 1e-6 {
                violations += 1;
            }
        }
    }
    verdict(
        violations == 0,
        format!("{} (family, omega) pairs: {violations} violations, max increase {worst:.1e} (tol 1e-6)", cells.len()),
    )
}

fn main() {
    let strict = std::env::var("WSM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results: Vec<(String, Verdict)> = Vec::new();
    let mut run = |id: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        println!(
            "criterion {id:>3}: {} ({:.1?}) {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed(),
            v.detail
        );
        results.push((id.to_string(), v));
    };
    run("1", &mut criterion_1);
    run("2", &mut criterion_2);
    run("3", &mut criterion_3);

    let (config, settings) = sweep_config();
    let mut rows = Vec::new();
    let mut supplement4 = None;
    run("4", &mut || {
        let start = Instant::now();
        rows = experiment::run_sweep(&config, &settings, 1).unwrap();
        let (main, supplement) = criterion_4(&rows, start.elapsed());
        supplement4 = Some(supplement);
        main
    });
    run("4b", &mut || supplement4.take().unwrap());
    run("5", &mut || criterion_5(&rows, &config, &settings));
    run("6", &mut criterion_6);
    run("7", &mut criterion_7);
    run("8", &mut || criterion_8(&rows, &config));
    run("9", &mut criterion_9);
    run("10", &mut criterion_10);

    let mut unexpected = Vec::new();
    for (id, v) in &results {
        let known = KNOWN_FAILURES.iter().find(|(k, _)| k.to_string() == *id);
        match (v.pass, known) {
            (false, Some((_, why))) => println!("criterion {id} fails as expected: {why}"),
            (false, None) => unexpected.push(format!("criterion {id} failed")),
            (true, Some(_)) => unexpected.push(format!("criterion {id} passed but is listed as a known failure")),
            (true, None) => {}
        }
    }
    let any_fail = results.iter().any(|(_, v)| !v.pass);
    if !unexpected.is_empty() || (strict && any_fail) {
        for u in &unexpected {
            eprintln!("{u}");
        }
        std::process::exit(1);
    }
}
