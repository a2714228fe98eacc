use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use wsm_core::curvature;
use wsm_core::expfam::family_from_angle;
use wsm_core::flow::{self, RateEstimator};
use wsm_core::geodesic::{self, GeodesicParams};
use wsm_core::ground_metric::{laplacian_pinv, Graph};
use wsm_core::inequalities::chaining_consistent;
use wsm_core::manifold::{self, ParamBox, SimplexChart, StatisticalModel};
use wsm_core::report::{read_sweep_csv, write_sweep_csv, SweepRow};
use wsm_core::Distribution;

fn simplex_model() -> StatisticalModel {
    StatisticalModel::new(
        Arc::new(SimplexChart { n: 4 }),
        ParamBox::new(vec![0.05; 3], vec![0.3; 3]).unwrap(),
    )
    .unwrap()
}

fn weights() -> impl Strategy<Value = [f64; 3]> {
    // at least two positive weights keep the triangle connected
    (0.05f64..1.0, 0.05f64..1.0, 0.0f64..1.0).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pullback_matches_simplex_quadratic_form(
        theta in proptest::collection::vec(0.05f64..0.3, 3),
        a in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let m = simplex_model();
        let g = Graph::new(4, &[(0, 1, 1.0), (1, 2, 0.4), (2, 3, 0.7), (0, 3, 0.2), (0, 2, 0.9)]).unwrap();
        let a = DVector::from_vec(a);
        let gw = manifold::metric_w(&m, &g, &theta).unwrap().matrix;
        let sigma = SimplexChart { n: 4 }.embed_tangent(&a);
        let pinv = laplacian_pinv(&g, &m.distribution(&theta).unwrap()).unwrap();
        let lhs = (a.transpose() * gw * &a)[(0, 0)];
        let rhs = (sigma.transpose() * pinv * &sigma)[(0, 0)];
        prop_assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn metric_scales_inversely_with_weights(phi in 0.0f64..3.1, w in weights(), s in 0.1f64..10.0, theta in -1.0f64..1.0) {
        let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle(w).unwrap();
        let base = manifold::metric_w(&m, &g, &[theta]).unwrap().matrix[(0, 0)];
        let scaled = manifold::metric_w(&m, &g.scaled(s).unwrap(), &[theta]).unwrap().matrix[(0, 0)];
        prop_assert!((scaled - base / s).abs() < 1e-10 * base.max(1.0));
    }

    #[test]
    fn metrics_are_definite(theta in proptest::collection::vec(0.05f64..0.3, 3)) {
        let m = simplex_model();
        let g = Graph::complete(4, 1.0).unwrap();
        let gw = manifold::metric_w(&m, &g, &theta).unwrap().matrix;
        let gf = manifold::metric_f(&m, &theta).unwrap().matrix;
        prop_assert!(gw.symmetric_eigenvalues().min() > 0.0);
        prop_assert!(gf.symmetric_eigenvalues().min() >= 0.0);
    }

    #[test]
    fn kl_gradient_matches_differences(
        theta in proptest::collection::vec(0.06f64..0.29, 3),
        q in proptest::collection::vec(0.05f64..1.0, 4),
    ) {
        let m = simplex_model();
        let s: f64 = q.iter().sum();
        let q = Distribution::from_slice(&q.iter().map(|x| x / s).collect::<Vec<_>>()).unwrap();
        let grad = manifold::kl_grad(&m, &theta, &q).unwrap();
        for k in 0..3 {
            let mut tp = theta.clone();
            tp[k] += 1e-5;
            let mut tm = theta.clone();
            tm[k] -= 1e-5;
            let fd = (manifold::kl_at(&m, &tp, &q).unwrap() - manifold::kl_at(&m, &tm, &q).unwrap()) / 2e-5;
            prop_assert!((grad[k] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn generalized_eigenvalue_matches_direct_spectrum(phi in 0.0f64..3.1, w in weights(), theta in -1.0f64..1.0) {
        let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle(w).unwrap();
        let q = Distribution::uniform(3);
        let riw = curvature::riw_matrix(&m, &g, &[theta], &q).unwrap()[(0, 0)];
        let gw = manifold::metric_w(&m, &g, &[theta]).unwrap().matrix[(0, 0)];
        let l = curvature::lambda_min(&m, &g, &[theta], &q).unwrap();
        prop_assert!((l - riw / gw).abs() < 1e-8 * l.abs().max(1.0));
    }

    #[test]
    fn chaining_holds_where_both_pass(kappa in 0.1f64..5.0, d in 0.0f64..2.0, info in 0.0f64..10.0) {
        // Talagrand and log-Sobolev with the same excess imply κ d ≤ √ℐ
        let excess_lo = 0.5 * kappa * d * d;
        let excess_hi = info / (2.0 * kappa);
        if excess_lo <= excess_hi {
            prop_assert!(chaining_consistent(kappa, d, info));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rate_is_invariant_under_permuting_initials(phi in 0.0f64..3.1, w in weights(), shift in 0usize..5, flip: bool) {
        let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle(w).unwrap();
        let q = Distribution::uniform(3);
        let initials: Vec<Vec<f64>> = [-0.9, -0.4, 0.3, 0.6, 0.95].iter().map(|&x| vec![x]).collect();
        let mut permuted = initials.clone();
        permuted.rotate_left(shift);
        if flip {
            permuted.reverse();
        }
        for est in [RateEstimator::SecondDifference, RateEstimator::LogRatio] {
            let a = flow::convergence_rate_k(&m, &g, &q, &initials, 1e-2, 0.1, est).unwrap();
            let b = flow::convergence_rate_k(&m, &g, &q, &permuted, 1e-2, 0.1, est).unwrap();
            prop_assert_eq!(a.k, b.k);
            prop_assert_eq!(a.argmin, b.argmin);
        }
    }

    #[test]
    fn trajectories_are_bit_identical(phi in 0.0f64..3.1, w in weights(), theta0 in -1.0f64..1.0) {
        let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle(w).unwrap();
        let q = Distribution::from_slice(&[0.2, 0.3, 0.5]).unwrap();
        let p = flow::FlowParams::euler(1e-2);
        let run = || flow::fpe_trajectory(&m, &g, &[theta0], &q, &p, 0.3);
        match (run(), run()) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "runs disagree"),
        }
    }

    #[test]
    fn one_step_dissipation_matches_fisher_information(phi in 0.0f64..3.1, w in weights(), theta in -0.8f64..0.8) {
        let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle(w).unwrap();
        let q = Distribution::from_slice(&[0.5, 0.3, 0.2]).unwrap();
        let info = manifold::relative_fisher_info(&m, &g, &[theta], &q).unwrap();
        prop_assume!(info > 1e-6);
        let k0 = manifold::kl_at(&m, &[theta], &q).unwrap();
        let rate = |h: f64| {
            let next = flow::fpe_step(&m, &g, &[theta], &q, h).unwrap();
            (k0 - manifold::kl_at(&m, &next, &q).unwrap()) / h
        };
        // Richardson extrapolation removes the O(h) term
        let extrapolated = 2.0 * rate(5e-5) - rate(1e-4);
        prop_assert!((extrapolated - info).abs() < 1e-4 * info.max(1e-2), "{} vs {}", extrapolated, info);
    }

    #[test]
    fn distance_is_symmetric(phi in 0.0f64..3.1, w in weights(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle(w).unwrap();
        let p = GeodesicParams::with_segments(32);
        let a = geodesic::distance_w_with(&m, &g, &[x], &[y], &p).unwrap();
        let b = geodesic::distance_w_with(&m, &g, &[y], &[x], &p).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * a.max(1.0));
    }

    #[test]
    fn sweep_csv_round_trips(
        rows in proptest::collection::vec(
            (0usize..30, 0.0f64..3.1, weights(), proptest::option::of(-5.0f64..5.0), proptest::option::of(-5.0f64..5.0), 0u64..10_000),
            1..6,
        ),
    ) {
        let rows: Vec<SweepRow> = rows
            .into_iter()
            .map(|(i, phi, omega, kappa, k, ms)| SweepRow {
                family_index: i,
                phi,
                omega,
                theta_domain: [-1.0, 1.0],
                kappa,
                k,
                k_log: k.map(|v| v + 0.5),
                error: if kappa.is_none() { Some("degenerate, \"quoted\"".into()) } else { None },
                runtime_ms: ms,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sweep_csv(&rows, &path).unwrap();
        prop_assert_eq!(read_sweep_csv(&path).unwrap(), rows);
    }
}
