//! The RIW matrix, the Ricci curvature lower bound `κ` and geodesic convexity of KL.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{csv_err, csv_writer};
use crate::geodesic::{self, GeodesicParams};
use crate::ground_metric::{Distribution, Graph};
use crate::linalg;
use crate::manifold::{self, StatisticalModel};

/// Points per dimension of the default curvature grid.
pub const DEFAULT_GRID_POINTS: usize = 41;
/// Slack allowed on convexity residuals.
pub const CONVEXITY_TOL: f64 = 1e-6;

/// Where the first and second differentials of `p(θ)` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Differentials {
    Analytic,
    FiniteDifference,
}

impl Differentials {
    pub fn of(model: &StatisticalModel) -> Self {
        let corner = &model.domain().corners()[0];
        let param = model.parametrization();
        if param.jacobian(corner).is_some() && param.hessians(corner).is_some() {
            Differentials::Analytic
        } else {
            Differentials::FiniteDifference
        }
    }
}

/// `M(θ) = G_F + Σ_i d_θθ p_i log(p_i/q_i) − Σ_k Γ^k ∂_k KL`, symmetrized.
pub fn riw_matrix(model: &StatisticalModel, graph: &Graph, theta: &[f64], q: &Distribution) -> Result<DMatrix<f64>> {
    manifold::check_graph(model, graph)?;
    manifold::check_q(model, q)?;
    let p = model.distribution(theta)?;
    let j = manifold::jacobian_raw(model, theta)?;
    let mut m = manifold::fisher_from(&p, &j);
    let logs = manifold::log_ratio(&p, q);
    for (h, l) in manifold::second_diff_raw(model, theta)?.iter().zip(logs.iter()) {
        m += h * *l;
    }
    let grad = j.transpose() * &logs;
    let gamma = manifold::christoffel_raw(model, graph, theta, None)?;
    for (gk, dk) in gamma.iter().zip(grad.iter()) {
        m -= gk * *dk;
    }
    Ok(linalg::symmetrize(&m))
}

/// Smallest eigenvalue of the pencil `M(θ) v = λ G_W(θ) v`.
pub fn lambda_min(model: &StatisticalModel, graph: &Graph, theta: &[f64], q: &Distribution) -> Result<f64> {
    let m = riw_matrix(model, graph, theta, q)?;
    let g = manifold::metric_w_raw(model, graph, theta)?;
    Ok(linalg::generalized_sym_eigenvalues(&m, &g)?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePoint {
    pub theta: Vec<f64>,
    /// `λ_min(θ)`, or the failure message for points that were excluded.
    pub lambda_min: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub points: Vec<CurvaturePoint>,
    pub kappa: f64,
    pub argmin: Vec<f64>,
    pub q: Vec<f64>,
    pub differentials: Differentials,
}

impl CurvatureReport {
    pub fn grid(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|p| p.theta.as_slice())
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.lambda_min.is_err()).count()
    }

    /// CSV with columns `theta_1..theta_d, lambda_min, status`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.points.first().map_or(0, |p| p.theta.len());
        let mut w = csv_writer(path)?;
        let mut header: Vec<String> = (1..=d).map(|k| format!("theta_{k}")).collect();
        header.push("lambda_min".into());
        header.push("status".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for p in &self.points {
            let mut rec: Vec<String> = p.theta.iter().map(|x| x.to_string()).collect();
            match &p.lambda_min {
                Ok(l) => {
                    rec.push(l.to_string());
                    rec.push("ok".into());
                }
                Err(e) => {
                    rec.push(String::new());
                    rec.push(e.clone());
                }
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::Io { path: path.into(), source: e })
    }
}

/// `κ = min_θ λ_min(θ)` over `grid`. Points that fail are recorded and excluded.
pub fn ricci_lower_bound(
    model: &StatisticalModel,
    graph: &Graph,
    q: &Distribution,
    grid: &[Vec<f64>],
) -> Result<CurvatureReport> {
    manifold::check_graph(model, graph)?;
    manifold::check_q(model, q)?;
    if grid.is_empty() {
        return Err(Error::Config("curvature grid is empty".into()));
    }
    for theta in grid {
        model.check_domain(theta)?;
    }
    let points: Vec<CurvaturePoint> = grid
        .iter()
        .map(|theta| CurvaturePoint {
            theta: theta.clone(),
            lambda_min: lambda_min(model, graph, theta, q).map_err(|e| e.to_string()),
        })
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Ok(l) = p.lambda_min {
            if best.is_none_or(|(b, _)| l < b) {
                best = Some((l, i));
            }
        }
    }
    let (kappa, i) = best.ok_or_else(|| {
        Error::Degenerate(format!(
            "curvature failed at every grid point (first: {})",
            points[0].lambda_min.as_ref().unwrap_err()
        ))
    })?;
    Ok(CurvatureReport {
        argmin: points[i].theta.clone(),
        points,
        kappa,
        q: q.as_slice().to_vec(),
        differentials: Differentials::of(model),
    })
}

/// `κ` on the default grid (41 points per dimension over the domain box).
pub fn ricci_lower_bound_default(model: &StatisticalModel, graph: &Graph, q: &Distribution) -> Result<CurvatureReport> {
    ricci_lower_bound(model, graph, q, &model.domain().uniform_grid(DEFAULT_GRID_POINTS))
}

/// Residuals `(1−t)KL(θ_0) + t KL(θ_1) − (κ/2) t(1−t) d_W² − KL(θ_t)` along the
/// constant-speed geodesic, at each sampled `t`.
pub fn convexity_check(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: &[f64],
    theta1: &[f64],
    q: &Distribution,
    kappa: f64,
    samples: &[f64],
) -> Result<Vec<f64>> {
    convexity_check_with(model, graph, theta0, theta1, q, kappa, samples, &GeodesicParams::default())
}

#[allow(clippy::too_many_arguments)]
pub fn convexity_check_with(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: &[f64],
    theta1: &[f64],
    q: &Distribution,
    kappa: f64,
    samples: &[f64],
    params: &GeodesicParams,
) -> Result<Vec<f64>> {
    manifold::check_q(model, q)?;
    let path = geodesic::constant_speed_geodesic(model, graph, theta0, theta1, params)?;
    if !path.converged {
        return Err(Error::Inconsistency("geodesic optimizer did not converge".into()));
    }
    let d2 = path.distance * path.distance;
    let k0 = manifold::kl_at(model, theta0, q)?;
    let k1 = manifold::kl_at(model, theta1, q)?;
    let pts = path.positions(model, graph, samples)?;
    samples
        .iter()
        .zip(&pts)
        .map(|(&t, theta)| {
            let kt = manifold::kl(&model.eval_interior(theta)?, q);
            Ok((1.0 - t) * k0 + t * k1 - 0.5 * kappa * t * (1.0 - t) * d2 - kt)
        })
        .collect()
}

/// `d²/dt² KL(p(θ_t)‖q)` at `t = 0` along the geodesic with `θ_0 = θ`, `θ̇_0 = a`,
/// by a central difference with step `tau` in `t`.
pub fn kl_second_derivative_along_geodesic(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    a: &[f64],
    q: &Distribution,
    tau: f64,
) -> Result<f64> {
    let fwd = geodesic::exp_map(model, graph, theta, a, tau, 1e-13)?;
    let bwd = geodesic::exp_map(model, graph, theta, a, -tau, 1e-13)?;
    let f = |t: &[f64]| -> Result<f64> { Ok(manifold::kl(&model.eval_interior(t)?, q)) };
    Ok((f(&fwd)? - 2.0 * f(theta)? + f(&bwd)?) / (tau * tau))
}

/// `aᵀ M(θ) a`.
pub fn riw_quadratic_form(model: &StatisticalModel, graph: &Graph, theta: &[f64], q: &Distribution, a: &[f64]) -> Result<f64> {
    let m = riw_matrix(model, graph, theta, q)?;
    let a = DVector::from_column_slice(a);
    Ok((a.transpose() * m * &a)[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::family_from_angle;
    use crate::manifold::{ParamBox, SimplexChart};
    use std::sync::Arc;

    #[test]
    fn uniform_reference_at_origin_gives_fisher() {
        let g = Graph::triangle([0.5, 0.5, 0.0]).unwrap();
        let q = Distribution::uniform(3);
        for phi in [0.0, 1.0, 2.5] {
            let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
            let riw = riw_matrix(&m, &g, &[0.0], &q).unwrap();
            assert!((riw[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_model_at_reference_gives_fisher() {
        let m = StatisticalModel::new(
            Arc::new(SimplexChart { n: 3 }),
            ParamBox::new(vec![0.1, 0.1], vec![0.4, 0.4]).unwrap(),
        )
        .unwrap();
        let g = Graph::complete(3, 1.0).unwrap();
        let theta = [0.25, 0.35];
        let q = m.distribution(&theta).unwrap();
        let riw = riw_matrix(&m, &g, &theta, &q).unwrap();
        let gf = manifold::metric_f(&m, &theta).unwrap().matrix;
        assert!(linalg::max_abs_diff(&riw, &gf) < 1e-10);
    }

    #[test]
    fn generalized_solve_matches_direct_spectrum() {
        let m = StatisticalModel::new(
            Arc::new(SimplexChart { n: 3 }),
            ParamBox::new(vec![0.1, 0.1], vec![0.4, 0.4]).unwrap(),
        )
        .unwrap();
        let g = Graph::new(3, &[(0, 1, 1.0), (1, 2, 0.3), (0, 2, 0.6)]).unwrap();
        let q = Distribution::from_slice(&[0.5, 0.2, 0.3]).unwrap();
        let theta = [0.3, 0.15];
        let riw = riw_matrix(&m, &g, &theta, &q).unwrap();
        let gw = manifold::metric_w(&m, &g, &theta).unwrap().matrix;
        let direct = gw.try_inverse().unwrap() * &riw;
        let mut ev: Vec<f64> = direct.complex_eigenvalues().iter().map(|z| z.re).collect();
        ev.sort_by(f64::total_cmp);
        let l = lambda_min(&m, &g, &theta, &q).unwrap();
        assert!((l - ev[0]).abs() < 1e-8);
    }

    #[test]
    fn single_point_grid_and_nested_grids() {
        let m = family_from_angle(0.3).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle([0.2, 0.3, 0.5]).unwrap();
        let q = Distribution::uniform(3);
        let one = ricci_lower_bound(&m, &g, &q, &[vec![0.4]]).unwrap();
        assert_eq!(one.kappa, lambda_min(&m, &g, &[0.4], &q).unwrap());
        // sub-grids of one fine grid: a coarser subset can only raise the minimum
        let fine: Vec<Vec<f64>> = manifold::linspace(-1.0, 1.0, 41).into_iter().map(|x| vec![x]).collect();
        let mut last = f64::NEG_INFINITY;
        for stride in [1, 2, 4, 20] {
            let grid: Vec<Vec<f64>> = fine.iter().step_by(stride).cloned().collect();
            let r = ricci_lower_bound(&m, &g, &q, &grid).unwrap();
            assert!(r.kappa >= last);
            last = r.kappa;
        }
    }

    #[test]
    fn convexity_endpoints_and_kappa_shift() {
        let m = family_from_angle(1.1).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle([0.5, 0.5, 0.0]).unwrap();
        let q = Distribution::uniform(3);
        let ts: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let a = convexity_check(&m, &g, &[-0.8], &[0.6], &q, 1.0, &ts).unwrap();
        let b = convexity_check(&m, &g, &[-0.8], &[0.6], &q, 0.0, &ts).unwrap();
        assert!(a[0].abs() < 1e-14 && a[10].abs() < 1e-14, "{} {}", a[0], a[10]);
        let d = geodesic::distance_w(&m, &g, &[-0.8], &[0.6]).unwrap();
        for (k, t) in ts.iter().enumerate() {
            let expected = 0.5 * t * (1.0 - t) * d * d;
            assert!((b[k] - a[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn riw_matches_geodesic_second_derivative() {
        let m = family_from_angle(0.9).unwrap().model(-1.0, 1.0).unwrap();
        let g = Graph::triangle([0.3, 0.3, 0.4]).unwrap();
        let q = Distribution::from_slice(&[0.2, 0.5, 0.3]).unwrap();
        for theta in [-0.6, 0.1, 0.7] {
            let gw = manifold::metric_w(&m, &g, &[theta]).unwrap().matrix[(0, 0)];
            let a = [1.0 / gw.sqrt()];
            let quad = riw_quadratic_form(&m, &g, &[theta], &q, &a).unwrap();
            let fd = kl_second_derivative_along_geodesic(&m, &g, &[theta], &a, &q, 1e-3).unwrap();
            assert!((quad - fd).abs() < 1e-3 * quad.abs().max(1e-3), "{theta}: {quad} vs {fd}");
        }
    }
}
