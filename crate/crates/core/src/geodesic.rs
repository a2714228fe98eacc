//! Action-minimizing paths and the constrained Wasserstein distance `d_W` on parameter space.
//!
//! The discrete action `E = N Σ_k Δθ_kᵀ G_W(θ_{k+½}) Δθ_k` is minimized over interior nodes
//! starting from the straight line. The minimizer is then polished by shooting on the
//! geodesic equation `θ̈ + Γ(θ̇, θ̇) = 0`, which yields a constant-speed path whose length is
//! free of the `O(N⁻²)` discretization error.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{csv_err, csv_writer};
use crate::ground_metric::Graph;
use crate::manifold::{self, StatisticalModel};

pub const DEFAULT_SEGMENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodesicParams {
    pub segments: usize,
    pub max_iter: usize,
    /// Stop once the Euclidean norm of the energy gradient drops below this.
    pub grad_tol: f64,
    /// Number of seeds; seed 0 is the straight line, the rest are bowed perturbations.
    pub multi_start: usize,
    /// Polish the discrete minimizer by shooting.
    pub refine: bool,
    /// Local error tolerance of the adaptive geodesic integrator used for shooting.
    pub shooting_tol: f64,
}

impl Default for GeodesicParams {
    fn default() -> Self {
        GeodesicParams {
            segments: DEFAULT_SEGMENTS,
            max_iter: 2000,
            grad_tol: 1e-8,
            multi_start: 1,
            refine: true,
            shooting_tol: 1e-11,
        }
    }
}

impl GeodesicParams {
    pub fn with_segments(segments: usize) -> Self {
        GeodesicParams { segments, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.segments < 2 {
            return Err(Error::Config(format!("geodesic needs N >= 2 segments, got {}", self.segments)));
        }
        if self.multi_start == 0 || !(self.shooting_tol > 0.0) {
            return Err(Error::Config("multi_start and shooting_tol must be positive".into()));
        }
        Ok(())
    }
}

/// A path `θ_0..θ_N` between two parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOnParams {
    pub segments: usize,
    pub nodes: Vec<Vec<f64>>,
    /// Action of the path; for a refined path this is the squared length of the geodesic.
    pub energy: f64,
    /// `√energy`.
    pub distance: f64,
    /// Discrete action of the optimizer's minimizer at `segments`.
    pub discrete_energy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the path was polished by shooting; positions at any `t` follow from it.
    pub initial_velocity: Option<Vec<f64>>,
    pub shooting_tol: f64,
    /// Relative spread of the distances found by the multi-start seeds.
    pub multistart_spread: f64,
}

impl PathOnParams {
    fn constant(theta: &[f64], segments: usize, shooting_tol: f64) -> Self {
        PathOnParams {
            segments,
            nodes: vec![theta.to_vec(); segments + 1],
            energy: 0.0,
            distance: 0.0,
            discrete_energy: 0.0,
            converged: true,
            iterations: 0,
            initial_velocity: Some(vec![0.0; theta.len()]),
            shooting_tol,
            multistart_spread: 0.0,
        }
    }

    pub fn is_refined(&self) -> bool {
        self.initial_velocity.is_some()
    }

    /// Whether the multi-start seeds disagreed by more than `1e-3` relative.
    pub fn multistart_disagrees(&self) -> bool {
        self.multistart_spread > 1e-3
    }

    /// `g_W`-speeds `N·√(Δθ_kᵀ G_W(θ_{k+½}) Δθ_k)` of the segments.
    pub fn segment_speeds(&self, model: &StatisticalModel, graph: &Graph) -> Result<Vec<f64>> {
        let n = self.segments as f64;
        self.nodes
            .windows(2)
            .map(|w| {
                let (mid, delta) = mid_delta(&w[0], &w[1]);
                let g = manifold::metric_w_raw(model, graph, &mid)?;
                Ok(n * (delta.transpose() * g * &delta)[(0, 0)].max(0.0).sqrt())
            })
            .collect()
    }

    /// Points `θ_t` for the given times in `[0, 1]`. Refined paths integrate the geodesic
    /// equation; otherwise nodes are interpolated linearly.
    pub fn positions(&self, model: &StatisticalModel, graph: &Graph, ts: &[f64]) -> Result<Vec<Vec<f64>>> {
        if ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("path times must lie in [0, 1]".into()));
        }
        match &self.initial_velocity {
            Some(v0) => {
                let mut order: Vec<usize> = (0..ts.len()).collect();
                order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
                let mut out = vec![Vec::new(); ts.len()];
                let theta = DVector::from_column_slice(&self.nodes[0]);
                let v = DVector::from_column_slice(v0);
                let sorted: Vec<f64> = order.iter().map(|&i| ts[i]).collect();
                let states = integrate_geodesic(model, graph, &theta, &v, &sorted, self.shooting_tol)?;
                for (idx, x) in order.into_iter().zip(states) {
                    out[idx] = if ts[idx] == 1.0 {
                        self.nodes[self.segments].clone()
                    } else {
                        x.iter().copied().collect()
                    };
                }
                Ok(out)
            }
            None => Ok(ts.iter().map(|&t| interpolate(&self.nodes, t)).collect()),
        }
    }

    /// CSV with columns `k, t_k, theta_1..theta_d, segment_speed`; node `k < N` carries the
    /// speed of segment `k`, the last node repeats the final segment.
    pub fn write_csv(&self, model: &StatisticalModel, graph: &Graph, path: &Path) -> Result<()> {
        let speeds = self.segment_speeds(model, graph)?;
        let d = self.nodes[0].len();
        let mut w = csv_writer(path)?;
        let mut header = vec!["k".to_string(), "t_k".to_string()];
        header.extend((1..=d).map(|k| format!("theta_{k}")));
        header.push("segment_speed".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (k, node) in self.nodes.iter().enumerate() {
            let mut rec = vec![k.to_string(), (k as f64 / self.segments as f64).to_string()];
            rec.extend(node.iter().map(|x| x.to_string()));
            rec.push(speeds[k.min(self.segments - 1)].to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::Io { path: path.into(), source: e })
    }
}

fn interpolate(nodes: &[Vec<f64>], t: f64) -> Vec<f64> {
    let n = nodes.len() - 1;
    let x = t * n as f64;
    let k = (x.floor() as usize).min(n - 1);
    let s = x - k as f64;
    nodes[k].iter().zip(&nodes[k + 1]).map(|(a, b)| a + s * (b - a)).collect()
}

fn mid_delta(a: &[f64], b: &[f64]) -> (Vec<f64>, DVector<f64>) {
    let mid = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let delta = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| y - x));
    (mid, delta)
}

/// Discrete action `N Σ_k Δθ_kᵀ G_W(θ_{k+½}) Δθ_k`.
pub fn discrete_energy(model: &StatisticalModel, graph: &Graph, nodes: &[Vec<f64>]) -> Result<f64> {
    let n = (nodes.len() - 1) as f64;
    let mut e = 0.0;
    for w in nodes.windows(2) {
        let (mid, delta) = mid_delta(&w[0], &w[1]);
        let g = manifold::metric_w_raw(model, graph, &mid)?;
        e += (delta.transpose() * g * &delta)[(0, 0)];
    }
    Ok(n * e)
}

struct EnergyJet {
    energy: f64,
    /// Gradient with respect to interior nodes `1..N-1`.
    grad: Vec<DVector<f64>>,
    /// Midpoint metrics per segment.
    metrics: Vec<DMatrix<f64>>,
}

fn energy_jet(model: &StatisticalModel, graph: &Graph, nodes: &[Vec<f64>]) -> Result<EnergyJet> {
    let segs = nodes.len() - 1;
    let n = segs as f64;
    let d = nodes[0].len();
    let mut energy = 0.0;
    let mut metrics = Vec::with_capacity(segs);
    let mut left = Vec::with_capacity(segs);
    let mut right = Vec::with_capacity(segs);
    for w in nodes.windows(2) {
        let (mid, delta) = mid_delta(&w[0], &w[1]);
        let (g, dg) = manifold::metric_w_jet(model, graph, &mid)?;
        let gd = &g * &delta;
        energy += delta.dot(&gd);
        let half = DVector::from_iterator(d, dg.iter().map(|m| 0.5 * (delta.transpose() * m * &delta)[(0, 0)]));
        // ∂/∂θ_k and ∂/∂θ_{k+1} of Δᵀ G(mid) Δ
        left.push(-&gd * 2.0 + &half);
        right.push(gd * 2.0 + half);
        metrics.push(g);
    }
    let grad = (1..segs).map(|j| (&right[j - 1] + &left[j]) * n).collect();
    Ok(EnergyJet { energy: n * energy, grad, metrics })
}

/// Solves `H s = g` for the block-tridiagonal Gauss–Newton matrix of the discrete action:
/// diagonal blocks `2N(G_{j-1} + G_j)`, off-diagonal blocks `−2N G_j`.
fn block_tridiagonal_solve(metrics: &[DMatrix<f64>], grad: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let n = metrics.len() as f64;
    let m = grad.len();
    let fail = || Error::DegenerateMetric("singular block in geodesic preconditioner".into());
    let mut diag_inv: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut rhs: Vec<DVector<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        // node j+1 sits between segments j and j+1
        let mut b = (&metrics[j] + &metrics[j + 1]) * (2.0 * n);
        let mut g = grad[j].clone();
        if j > 0 {
            let c = &metrics[j] * (-2.0 * n);
            let w = &c * &diag_inv[j - 1];
            b -= &w * &c;
            g -= &w * &rhs[j - 1];
        }
        diag_inv.push(b.try_inverse().ok_or_else(fail)?);
        rhs.push(g);
    }
    let mut s = vec![DVector::zeros(0); m];
    for j in (0..m).rev() {
        let mut g = rhs[j].clone();
        if j + 1 < m {
            let c = &metrics[j + 1] * (-2.0 * n);
            g -= c * &s[j + 1];
        }
        s[j] = &diag_inv[j] * g;
    }
    Ok(s)
}

fn nodes_admissible(model: &StatisticalModel, nodes: &[Vec<f64>]) -> bool {
    nodes.iter().all(|t| model.is_admissible(t))
}

struct Descent {
    nodes: Vec<Vec<f64>>,
    energy: f64,
    converged: bool,
    iterations: usize,
}

/// Preconditioned gradient descent with Armijo backtracking from the given seed path.
fn descend(
    model: &StatisticalModel,
    graph: &Graph,
    mut nodes: Vec<Vec<f64>>,
    params: &GeodesicParams,
) -> Result<Descent> {
    let mut jet = energy_jet(model, graph, &nodes)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let gnorm = jet.grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        if gnorm < params.grad_tol {
            converged = true;
            break;
        }
        let step = block_tridiagonal_solve(&jet.metrics, &jet.grad)?;
        let decrement: f64 = jet.grad.iter().zip(&step).map(|(g, s)| g.dot(s)).sum();
        if !(decrement > 0.0) {
            converged = decrement.abs() <= 1e-13 * jet.energy.max(f64::MIN_POSITIVE);
            break;
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let trial: Vec<Vec<f64>> = nodes
                .iter()
                .enumerate()
                .map(|(k, node)| {
                    if k == 0 || k == nodes.len() - 1 {
                        node.clone()
                    } else {
                        node.iter().zip(step[k - 1].iter()).map(|(x, s)| x - alpha * s).collect()
                    }
                })
                .collect();
            if nodes_admissible(model, &trial) {
                let e = discrete_energy(model, graph, &trial)?;
                if e <= jet.energy - 1e-4 * alpha * decrement {
                    break Some(trial);
                }
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                break None;
            }
        };
        iterations += 1;
        match accepted {
            Some(trial) => {
                nodes = trial;
                jet = energy_jet(model, graph, &nodes)?;
            }
            None => {
                // no further decrease is representable: the remaining decrement is round-off
                converged = decrement <= 1e-13 * jet.energy.max(f64::MIN_POSITIVE);
                break;
            }
        }
    }
    if !converged && iterations >= params.max_iter {
        let gnorm = jet.grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        converged = gnorm < params.grad_tol;
    }
    Ok(Descent { energy: jet.energy, nodes, converged, iterations })
}

fn straight_line(theta0: &[f64], theta1: &[f64], segments: usize) -> Vec<Vec<f64>> {
    (0..=segments)
        .map(|k| {
            let t = k as f64 / segments as f64;
            theta0.iter().zip(theta1).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect()
}

/// Seed `s ≥ 1`: the straight line bowed by `sin(πt)` along alternating ± coordinate axes.
fn bowed_seed(model: &StatisticalModel, theta0: &[f64], theta1: &[f64], segments: usize, s: usize) -> Vec<Vec<f64>> {
    let d = theta0.len();
    let axis = (s - 1) / 2 % d;
    let sign = if s % 2 == 1 { 1.0 } else { -1.0 };
    let dom = model.domain();
    let width = dom.theta_max[axis] - dom.theta_min[axis];
    let amp = sign * 0.1 * width * (1 + (s - 1) / (2 * d)) as f64;
    let mut nodes = straight_line(theta0, theta1, segments);
    for (k, node) in nodes.iter_mut().enumerate() {
        let t = k as f64 / segments as f64;
        let x = node[axis] + amp * (std::f64::consts::PI * t).sin();
        node[axis] = x.clamp(dom.theta_min[axis], dom.theta_max[axis]);
    }
    nodes
}

fn check_endpoints(model: &StatisticalModel, graph: &Graph, theta0: &[f64], theta1: &[f64]) -> Result<()> {
    manifold::check_graph(model, graph)?;
    model.distribution(theta0)?;
    model.distribution(theta1)?;
    Ok(())
}

/// Minimizes the discrete action over interior nodes. Returns a best-effort path with
/// `converged = false` when the iteration cap is hit.
pub fn minimize_action(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: &[f64],
    theta1: &[f64],
    params: &GeodesicParams,
) -> Result<PathOnParams> {
    params.validate()?;
    check_endpoints(model, graph, theta0, theta1)?;
    if theta0 == theta1 {
        let mut p = PathOnParams::constant(theta0, params.segments, params.shooting_tol);
        p.initial_velocity = None;
        return Ok(p);
    }
    let mut best: Option<Descent> = None;
    let mut distances = Vec::new();
    for s in 0..params.multi_start {
        let seed = if s == 0 {
            straight_line(theta0, theta1, params.segments)
        } else {
            bowed_seed(model, theta0, theta1, params.segments, s)
        };
        if !nodes_admissible(model, &seed) {
            continue;
        }
        let run = descend(model, graph, seed, params)?;
        distances.push(run.energy.sqrt());
        if best.as_ref().is_none_or(|b| run.energy < b.energy) {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| Error::Inconsistency("no admissible geodesic seed".into()))?;
    let hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PathOnParams {
        segments: params.segments,
        nodes: best.nodes,
        energy: best.energy,
        distance: best.energy.sqrt(),
        discrete_energy: best.energy,
        converged: best.converged,
        iterations: best.iterations,
        initial_velocity: None,
        shooting_tol: params.shooting_tol,
        multistart_spread: if hi > 0.0 { (hi - lo) / hi } else { 0.0 },
    })
}

fn geodesic_rhs(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let t: Vec<f64> = theta.iter().copied().collect();
    let gamma = manifold::christoffel_analytic(model, graph, &t)?;
    Ok(-manifold::contract(&gamma, v))
}

const DP_A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
const MAX_SHOOTING_STEPS: usize = 200_000;

/// Adaptive Dormand–Prince 5(4) integration of the geodesic equation in state `(θ, v)`.
/// `times` must be monotone, all on the same side of 0; returns `θ` at each of them.
fn integrate_geodesic(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &DVector<f64>,
    v: &DVector<f64>,
    times: &[f64],
    tol: f64,
) -> Result<Vec<DVector<f64>>> {
    let d = theta.len();
    let mut y = DVector::zeros(2 * d);
    y.rows_mut(0, d).copy_from(theta);
    y.rows_mut(d, d).copy_from(v);
    let rhs = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = y.rows(0, d).into_owned();
        let w = y.rows(d, d).into_owned();
        let a = geodesic_rhs(model, graph, &x, &w)?;
        let mut f = DVector::zeros(2 * d);
        f.rows_mut(0, d).copy_from(&w);
        f.rows_mut(d, d).copy_from(&a);
        Ok(f)
    };
    let mut out = Vec::with_capacity(times.len());
    let mut now = 0.0f64;
    let mut h = 1e-2f64;
    let mut steps = 0usize;
    let mut k1 = rhs(&y)?;
    for &target in times {
        while (target - now).abs() > 0.0 {
            let dir = (target - now).signum();
            let remaining = (target - now).abs();
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
            k.push(k1.clone());
            let mut failed = false;
            for a in DP_A.iter().skip(1) {
                let mut yi = y.clone();
                for (j, aij) in a.iter().enumerate() {
                    if *aij != 0.0 {
                        yi.axpy(dir * step * aij, &k[j], 1.0);
                    }
                }
                match rhs(&yi) {
                    Ok(f) => k.push(f),
                    Err(Error::NotInterior(_) | Error::Domain { .. } | Error::DegenerateMetric(_)) => {
                        failed = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            steps += 1;
            if steps > MAX_SHOOTING_STEPS {
                return Err(Error::Degenerate("geodesic integration took too many steps".into()));
            }
            if failed {
                h = step * 0.25;
                if h < 1e-14 {
                    return Err(Error::Degenerate("geodesic left the model domain".into()));
                }
                continue;
            }
            let mut y5 = y.clone();
            let mut err = DVector::zeros(2 * d);
            for i in 0..7 {
                y5.axpy(dir * step * DP_B5[i], &k[i], 1.0);
                err.axpy(dir * step * (DP_B5[i] - DP_B4[i]), &k[i], 1.0);
            }
            let norm = (0..2 * d)
                .map(|i| {
                    let sc = tol + tol * y[i].abs().max(y5[i].abs());
                    (err[i] / sc).powi(2)
                })
                .sum::<f64>()
                / (2 * d) as f64;
            let norm = norm.sqrt();
            let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
            if norm <= 1.0 && y5.iter().all(|x| x.is_finite()) {
                y = y5;
                now = if last { target } else { now + dir * step };
                // first-same-as-last
                k1 = k.swap_remove(6);
                if !last || factor < 1.0 {
                    h = step * factor;
                }
            } else {
                h = step * factor.min(1.0);
                if h < 1e-14 {
                    return Err(Error::Degenerate("geodesic step size underflow".into()));
                }
            }
        }
        out.push(y.rows(0, d).into_owned());
    }
    Ok(out)
}

/// Geodesic from `θ` with initial velocity `v`, followed for time `t` (negative runs backwards)
/// with local error tolerance `tol`.
pub fn exp_map(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    v: &[f64],
    t: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let x = DVector::from_column_slice(theta);
    let w = DVector::from_column_slice(v);
    let out = integrate_geodesic(model, graph, &x, &w, &[t], tol)?;
    Ok(out[0].iter().copied().collect())
}

/// States of the geodesic at `t = k / segments`, `k = 0..=segments`.
fn shoot(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: &DVector<f64>,
    v0: &DVector<f64>,
    segments: usize,
    tol: f64,
) -> Result<Vec<DVector<f64>>> {
    let times: Vec<f64> = (0..=segments).map(|k| k as f64 / segments as f64).collect();
    integrate_geodesic(model, graph, theta0, v0, &times, tol)
}

/// Newton iteration on the initial velocity so that the geodesic from `θ_0` hits `θ_1` at
/// `t = 1`. Returns `(v0, nodes)` or `None` if shooting fails to converge.
fn refine_by_shooting(
    model: &StatisticalModel,
    graph: &Graph,
    path: &PathOnParams,
    params: &GeodesicParams,
) -> Option<(DVector<f64>, Vec<Vec<f64>>)> {
    let n = path.segments;
    let d = path.nodes[0].len();
    let theta0 = DVector::from_column_slice(&path.nodes[0]);
    let theta1 = DVector::from_column_slice(&path.nodes[n]);
    // one-sided second-order velocity estimate at t = 0
    let mut v = DVector::from_iterator(
        d,
        (0..d).map(|i| n as f64 * (-3.0 * path.nodes[0][i] + 4.0 * path.nodes[1][i] - path.nodes[2][i]) / 2.0),
    );
    let scale = (&theta1 - &theta0).norm().max(1e-300);
    let tol = params.shooting_tol;
    let endpoint = |v: &DVector<f64>| -> Option<DVector<f64>> {
        integrate_geodesic(model, graph, &theta0, v, &[1.0], tol).ok()?.pop()
    };
    for _ in 0..30 {
        let r = endpoint(&v)? - &theta1;
        if r.norm() <= 1e-12 * scale.max(1.0) {
            let nodes = shoot(model, graph, &theta0, &v, n, tol).ok()?;
            let mut nodes: Vec<Vec<f64>> = nodes.iter().map(|x| x.iter().copied().collect()).collect();
            nodes[n] = path.nodes[n].clone();
            let dom = model.domain();
            let inside = nodes.iter().all(|t| {
                t.iter().enumerate().all(|(k, x)| {
                    let slack = 1e-9 * (dom.theta_max[k] - dom.theta_min[k]).max(1.0);
                    *x >= dom.theta_min[k] - slack && *x <= dom.theta_max[k] + slack
                })
            });
            return inside.then_some((v, nodes));
        }
        let mut jac = DMatrix::zeros(d, d);
        for k in 0..d {
            let dv = 1e-7 * v.norm().max(1.0);
            let mut vp = v.clone();
            vp[k] += dv;
            let mut vm = v.clone();
            vm[k] -= dv;
            let col = (endpoint(&vp)? - endpoint(&vm)?) / (2.0 * dv);
            jac.set_column(k, &col);
        }
        let delta = jac.lu().solve(&r)?;
        v -= delta;
        if !v.iter().all(|x| x.is_finite()) {
            return None;
        }
    }
    None
}

/// Redistributes nodes by linear interpolation so that cumulative `g_W`-length is uniform in `k`.
fn reparametrize_by_arclength(model: &StatisticalModel, graph: &Graph, nodes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut nodes = nodes.to_vec();
    let n = nodes.len() - 1;
    for _ in 0..5 {
        let mut cum = vec![0.0];
        for w in nodes.windows(2) {
            let (mid, delta) = mid_delta(&w[0], &w[1]);
            let g = manifold::metric_w_raw(model, graph, &mid)?;
            let len = (delta.transpose() * g * &delta)[(0, 0)].max(0.0).sqrt();
            cum.push(cum.last().unwrap() + len);
        }
        let total = cum[n];
        if total == 0.0 {
            return Ok(nodes);
        }
        let mut out = Vec::with_capacity(n + 1);
        let mut seg = 0;
        for k in 0..=n {
            let target = total * k as f64 / n as f64;
            while seg < n - 1 && cum[seg + 1] < target {
                seg += 1;
            }
            let span = cum[seg + 1] - cum[seg];
            let s = if span > 0.0 { ((target - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
            out.push(nodes[seg].iter().zip(&nodes[seg + 1]).map(|(a, b)| a + s * (b - a)).collect());
        }
        out[0] = nodes[0].clone();
        out[n] = nodes[n].clone();
        nodes = out;
    }
    Ok(nodes)
}

/// Action minimizer reparametrized to constant `g_W`-speed. With `params.refine` the path is
/// polished by shooting; when shooting fails (e.g. the minimizer rests on the box boundary)
/// the discrete minimizer is reparametrized by arclength instead.
pub fn constant_speed_geodesic(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: &[f64],
    theta1: &[f64],
    params: &GeodesicParams,
) -> Result<PathOnParams> {
    params.validate()?;
    check_endpoints(model, graph, theta0, theta1)?;
    if theta0 == theta1 {
        return Ok(PathOnParams::constant(theta0, params.segments, params.shooting_tol));
    }
    let mut path = minimize_action(model, graph, theta0, theta1, params)?;
    if params.refine {
        if let Some((v0, nodes)) = refine_by_shooting(model, graph, &path, params) {
            let g = manifold::metric_w_raw(model, graph, theta0)?;
            let energy = (v0.transpose() * g * &v0)[(0, 0)];
            path.nodes = nodes;
            path.energy = energy;
            path.distance = energy.sqrt();
            path.initial_velocity = Some(v0.iter().copied().collect());
            return Ok(path);
        }
    }
    path.nodes = reparametrize_by_arclength(model, graph, &path.nodes)?;
    path.energy = discrete_energy(model, graph, &path.nodes)?;
    path.distance = path.energy.sqrt();
    Ok(path)
}

/// Constrained Wasserstein distance `d_W(θ_0, θ_1)` with the default discretization. The
/// result is checked against the discrete action at `N` (or at `2N` for unrefined paths).
pub fn distance_w(model: &StatisticalModel, graph: &Graph, theta0: &[f64], theta1: &[f64]) -> Result<f64> {
    distance_w_with(model, graph, theta0, theta1, &GeodesicParams::default())
}

pub fn distance_w_with(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: &[f64],
    theta1: &[f64],
    params: &GeodesicParams,
) -> Result<f64> {
    let path = constant_speed_geodesic(model, graph, theta0, theta1, params)?;
    if path.distance == 0.0 {
        return Ok(0.0);
    }
    let reference = if path.is_refined() {
        path.discrete_energy.sqrt()
    } else {
        let fine = GeodesicParams { segments: 2 * params.segments, refine: false, ..*params };
        minimize_action(model, graph, theta0, theta1, &fine)?.distance
    };
    let rel = (reference - path.distance).abs() / path.distance;
    if rel > 1e-3 {
        return Err(Error::Inconsistency(format!(
            "geodesic distance not resolved: {} vs {reference} (relative {rel:e})",
            path.distance
        )));
    }
    Ok(path.distance)
}

/// `|∫_{θ0}^{θ1} √G_W(θ) dθ|` for one-parameter models by composite Gauss–Legendre quadrature.
pub fn distance_1d_quadrature(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: f64,
    theta1: f64,
    panels: usize,
) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::Config("quadrature distance needs a one-parameter model".into()));
    }
    const X: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let (a, b) = (theta0.min(theta1), theta0.max(theta1));
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for k in 0..panels {
        let c = a + (k as f64 + 0.5) * h;
        for (x, w) in X.iter().zip(W) {
            let g = manifold::metric_w_raw(model, graph, &[c + 0.5 * h * x])?;
            s += w * 0.5 * h * g[(0, 0)].sqrt();
        }
    }
    Ok(s)
}
