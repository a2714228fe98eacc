//! Browser bindings for the three-state exponential-family demo in `www/`: curvature and rate
//! profiles, flow trajectories, and family curves on the simplex.
//!
//! Every export takes plain numbers and returns a JSON string; the reference distribution is
//! uniform throughout.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use wsm_core::expfam::family_from_angle;
use wsm_core::flow::{self, FlowParams, Termination};
use wsm_core::manifold::linspace;
use wsm_core::report;
use wsm_core::{Distribution, Graph, StatisticalModel};

/// Upper bound on grid sizes and flow steps so a slider drag cannot lock up the page.
const MAX_POINTS: usize = 401;
const MAX_STEPS: usize = 200_000;

#[derive(Debug, Serialize)]
pub struct Profile {
    pub theta: Vec<f64>,
    pub lambda_min: Vec<Option<f64>>,
    pub rate: Vec<Option<f64>>,
    pub kappa: f64,
    pub k: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Path {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub kl: Vec<f64>,
    /// Barycentric image of `p(θ_t)` in the unit triangle.
    pub xy: Vec<[f64; 2]>,
    pub termination: &'static str,
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub theta: Vec<f64>,
    pub p: Vec<[f64; 3]>,
    pub xy: Vec<[f64; 2]>,
}

fn setup(phi: f64, omega: [f64; 3], a: f64, b: f64) -> wsm_core::Result<(StatisticalModel, Graph, Distribution)> {
    let model = family_from_angle(phi)?.model(a, b)?;
    let graph = Graph::triangle(omega)?;
    Ok((model, graph, Distribution::uniform(3)))
}

fn check_points(points: usize) -> wsm_core::Result<()> {
    if points == 0 || points > MAX_POINTS {
        return Err(wsm_core::Error::Config(format!("points must lie in 1..={MAX_POINTS}, got {points}")));
    }
    Ok(())
}

/// `λ_min` and the per-initial convergence rate on a grid over `[a, b]`, with `κ` and `K`.
#[allow(clippy::too_many_arguments)]
pub fn profile(phi: f64, omega: [f64; 3], a: f64, b: f64, points: usize, h: f64, t: f64) -> wsm_core::Result<Profile> {
    check_points(points)?;
    let (model, graph, q) = setup(phi, omega, a, b)?;
    let theta = linspace(a, b, points);
    let data = report::pointwise_data(&model, &graph, &q, &theta, h, t)?;
    let kappa = data
        .lambda_min
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !kappa.is_finite() {
        return Err(wsm_core::Error::Degenerate("curvature failed at every grid point".into()));
    }
    let k = data
        .rate
        .iter()
        .flatten()
        .copied()
        .reduce(f64::min);
    Ok(Profile { theta: data.theta, lambda_min: data.lambda_min, rate: data.rate, kappa, k })
}

/// Explicit-Euler Fokker–Planck trajectory from `θ_0`.
#[allow(clippy::too_many_arguments)]
pub fn trajectory(phi: f64, omega: [f64; 3], a: f64, b: f64, theta0: f64, h: f64, t_end: f64) -> wsm_core::Result<Path> {
    let (model, graph, q) = setup(phi, omega, a, b)?;
    if !(h > 0.0) || !(t_end >= 0.0) || t_end / h > MAX_STEPS as f64 {
        return Err(wsm_core::Error::Config(format!("need h > 0 and at most {MAX_STEPS} steps")));
    }
    let traj = match flow::fpe_trajectory(&model, &graph, &[theta0], &q, &FlowParams::euler(h), t_end) {
        Ok(t) => t,
        Err(wsm_core::Error::BoundaryStall { partial }) => *partial,
        Err(e) => return Err(e),
    };
    let termination = match traj.termination {
        Termination::Converged => "converged",
        Termination::MaxSteps => "max-steps",
        Termination::BoundaryHit => "boundary-hit",
    };
    let mut out = Path { t: Vec::new(), theta: Vec::new(), kl: Vec::new(), xy: Vec::new(), termination };
    for s in &traj.samples {
        let p = model.eval_interior(&s.theta)?;
        let (x, y) = report::barycentric(p.as_slice());
        out.t.push(s.t);
        out.theta.push(s.theta[0]);
        out.kl.push(s.kl);
        out.xy.push([x, y]);
    }
    Ok(out)
}

/// The family `θ ↦ p(θ)` over `[a, b]` in barycentric coordinates.
pub fn family_curve(phi: f64, a: f64, b: f64, points: usize) -> wsm_core::Result<Curve> {
    check_points(points)?;
    let model = family_from_angle(phi)?.model(a, b)?;
    let theta = linspace(a, b, points);
    let mut p = Vec::with_capacity(points);
    let mut xy = Vec::with_capacity(points);
    for &t in &theta {
        let d = model.distribution(&[t])?;
        let s = d.as_slice();
        p.push([s[0], s[1], s[2]]);
        let (x, y) = report::barycentric(s);
        xy.push([x, y]);
    }
    Ok(Curve { theta, p, xy })
}

fn to_js<T: Serialize>(r: wsm_core::Result<T>) -> Result<String, JsError> {
    match r {
        Ok(v) => serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string())),
        Err(e) => Err(JsError::new(&e.to_string())),
    }
}

#[wasm_bindgen(js_name = curvatureProfile)]
#[allow(clippy::too_many_arguments)]
pub fn curvature_profile_js(
    phi: f64,
    w12: f64,
    w23: f64,
    w13: f64,
    a: f64,
    b: f64,
    points: usize,
    h: f64,
    t: f64,
) -> Result<String, JsError> {
    to_js(profile(phi, [w12, w23, w13], a, b, points, h, t))
}

#[wasm_bindgen(js_name = flowTrajectory)]
#[allow(clippy::too_many_arguments)]
pub fn flow_trajectory_js(
    phi: f64,
    w12: f64,
    w23: f64,
    w13: f64,
    a: f64,
    b: f64,
    theta0: f64,
    h: f64,
    t_end: f64,
) -> Result<String, JsError> {
    to_js(trajectory(phi, [w12, w23, w13], a, b, theta0, h, t_end))
}

#[wasm_bindgen(js_name = familyCurve)]
pub fn family_curve_js(phi: f64, a: f64, b: f64, points: usize) -> Result<String, JsError> {
    to_js(family_curve(phi, a, b, points))
}
