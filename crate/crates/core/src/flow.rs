//! Fokker–Planck equation on parameter space: the Wasserstein gradient flow
//! `θ̇ = −G_W(θ)⁻¹ ∇_θ D_KL(p(θ) ‖ q)` and the empirical convergence rate `K`.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_metric::{Distribution, Graph};
use crate::linalg;
use crate::manifold::{self, StatisticalModel};

/// Gradient norm below which a trajectory is considered converged.
pub const GRAD_TOL: f64 = 1e-10;
/// Denominator `|KL(θ_T) − KL(θ_0)|` below which an initial condition is skipped.
pub const RATE_DENOM_TOL: f64 = 1e-14;
pub const DEFAULT_H: f64 = 1e-3;
pub const DEFAULT_T: f64 = 0.1;
/// Initial conditions per parameter dimension for `K`.
pub const DEFAULT_INITIALS_PER_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Explicit Euler, as in the convergence-rate algorithm. Always used for `K`.
    #[default]
    Euler,
    /// Classical Runge–Kutta; only for dissipation-identity checks.
    Rk4,
}

/// Formula turning `KL(θ_0), KL(θ_T), KL(θ_2T)` into a rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RateEstimator {
    /// `(1/2T)·[KL(2T) − 2KL(T) + KL(0)] / [KL(0) − KL(T)]`: second over first difference.
    #[default]
    SecondDifference,
    /// `−ln([KL(T) − KL(2T)] / [KL(0) − KL(T)]) / 2T`: exact for exponential decay.
    LogRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub h: f64,
    /// Smallest step tried before giving up at the boundary.
    #[serde(default = "default_h_min")]
    pub h_min: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub integrator: Integrator,
}

fn default_h_min() -> f64 {
    1e-12
}

fn default_grad_tol() -> f64 {
    GRAD_TOL
}

impl FlowParams {
    pub fn euler(h: f64) -> Self {
        FlowParams {
            h,
            h_min: default_h_min(),
            grad_tol: GRAD_TOL,
            integrator: Integrator::Euler,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.h_min > 0.0) || self.h_min > self.h {
            return Err(Error::Config(format!(
                "flow step sizes must satisfy 0 < h_min <= h (h = {}, h_min = {})",
                self.h, self.h_min
            )));
        }
        Ok(())
    }
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams::euler(DEFAULT_H)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxSteps,
    BoundaryHit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub theta: Vec<f64>,
    pub kl: f64,
}

/// Samples `(t_k, θ_k, KL_k)` with `t_k = k h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// Where a stalled flow actually stopped, between the last two sample times.
    pub boundary: Option<Sample>,
}

impl Trajectory {
    /// KL at time `t` (a multiple of `h`). A converged trajectory stays at its last value.
    pub fn kl_at(&self, t: f64) -> Option<f64> {
        let k = (t / self.h).round();
        if (k * self.h - t).abs() > 1e-9 * self.h.max(t.abs()) || k < 0.0 {
            return None;
        }
        let k = k as usize;
        match self.samples.get(k) {
            Some(s) => Some(s.kl),
            None if self.termination == Termination::Converged => self.samples.last().map(|s| s.kl),
            None => None,
        }
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories always hold the initial sample")
    }

    /// CSV with columns `t, theta_1..theta_d, kl`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.samples.first().map_or(0, |s| s.theta.len());
        let mut w = csv_writer(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|k| format!("theta_{k}")));
        header.push("kl".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for s in &self.samples {
            let mut rec = vec![s.t.to_string()];
            rec.extend(s.theta.iter().map(|x| x.to_string()));
            rec.push(s.kl.to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::Io { path: path.into(), source: e })
    }
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv { path: path.into(), source: e }
}

/// Natural-gradient velocity `−G_W⁻¹ ∇KL` and the gradient itself.
fn velocity(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    q: &Distribution,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let g = manifold::metric_w_raw(model, graph, theta)?;
    let grad = manifold::kl_grad_raw(model, theta, q)?;
    let v = -linalg::spd_solve(&g, &grad, "G_W")?;
    Ok((v, grad))
}

fn advance(x: &[f64], v: &DVector<f64>, h: f64) -> Vec<f64> {
    x.iter().zip(v.iter()).map(|(a, b)| a + h * b).collect()
}

fn raw_step(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    q: &Distribution,
    h: f64,
    integrator: Integrator,
) -> Result<Vec<f64>> {
    let (k1, _) = velocity(model, graph, theta, q)?;
    match integrator {
        Integrator::Euler => Ok(advance(theta, &k1, h)),
        Integrator::Rk4 => {
            let (k2, _) = velocity(model, graph, &advance(theta, &k1, 0.5 * h), q)?;
            let (k3, _) = velocity(model, graph, &advance(theta, &k2, 0.5 * h), q)?;
            let (k4, _) = velocity(model, graph, &advance(theta, &k3, h), q)?;
            let v = (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
            Ok(advance(theta, &v, h))
        }
    }
}

fn is_stencil_failure(e: &Error) -> bool {
    matches!(e, Error::StencilMargin { .. } | Error::NotInterior(_))
}

/// The point after a full interval, or the last admissible point and its time offset on a stall.
type Interval = std::result::Result<Vec<f64>, (Vec<f64>, f64)>;

/// Advances by exactly `params.h`, splitting into halved sub-steps whenever a step would
/// leave the domain or push `min p_i` below the interior tolerance.
fn step_interval(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    q: &Distribution,
    params: &FlowParams,
) -> Result<Interval> {
    let mut x = theta.to_vec();
    let mut remaining = params.h;
    let mut local = params.h;
    while remaining > 0.0 {
        let h = local.min(remaining);
        match raw_step(model, graph, &x, q, h, params.integrator) {
            Ok(next) if model.is_admissible(&next) => {
                x = next;
                remaining -= h;
                if remaining < 1e-15 * params.h {
                    remaining = 0.0;
                }
            }
            Ok(_) => {
                local *= 0.5;
                if local < params.h_min {
                    return Ok(Err((x, params.h - remaining)));
                }
            }
            Err(e) if is_stencil_failure(&e) => {
                local *= 0.5;
                if local < params.h_min {
                    return Ok(Err((x, params.h - remaining)));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Ok(x))
}

/// One explicit Euler step `θ − h G_W(θ)⁻¹ ∇KL`, halving `h` (down to `1e-12`) on domain violation.
pub fn fpe_step(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    q: &Distribution,
    h: f64,
) -> Result<Vec<f64>> {
    fpe_step_with(model, graph, theta, q, &FlowParams::euler(h))
}

pub fn fpe_step_with(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    q: &Distribution,
    params: &FlowParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    manifold::check_graph(model, graph)?;
    manifold::check_q(model, q)?;
    model.distribution(theta)?;
    let g = manifold::metric_w_raw(model, graph, theta)?;
    linalg::check_positive_definite(&g, "G_W")?;
    match step_interval(model, graph, theta, q, params)? {
        Ok(x) => Ok(x),
        Err((x, dt)) => Err(Error::BoundaryStall {
            partial: Box::new(Trajectory {
                h: params.h,
                samples: vec![Sample {
                    t: 0.0,
                    theta: theta.to_vec(),
                    kl: manifold::kl_at(model, theta, q)?,
                }],
                termination: Termination::BoundaryHit,
                boundary: Some(Sample { t: dt, kl: manifold::kl_at(model, &x, q)?, theta: x }),
            }),
        }),
    }
}

/// Integrates the flow from `theta0` up to `t_end` (or until `‖∇KL‖ < grad_tol`).
pub fn fpe_trajectory(
    model: &StatisticalModel,
    graph: &Graph,
    theta0: &[f64],
    q: &Distribution,
    params: &FlowParams,
    t_end: f64,
) -> Result<Trajectory> {
    params.validate()?;
    manifold::check_graph(model, graph)?;
    manifold::check_q(model, q)?;
    if !(t_end >= 0.0) {
        return Err(Error::Config(format!("t_end must be non-negative, got {t_end}")));
    }
    let p0 = model.distribution(theta0)?;
    let steps = (t_end / params.h).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(Sample {
        t: 0.0,
        theta: theta0.to_vec(),
        kl: manifold::kl(&p0, q),
    });
    let mut theta = theta0.to_vec();
    for k in 1..=steps {
        let grad = manifold::kl_grad_raw(model, &theta, q)?;
        if grad.norm() < params.grad_tol {
            return Ok(Trajectory {
                h: params.h,
                samples,
                termination: Termination::Converged,
                boundary: None,
            });
        }
        let g = manifold::metric_w_raw(model, graph, &theta)?;
        linalg::check_positive_definite(&g, "G_W")?;
        match step_interval(model, graph, &theta, q, params)? {
            Ok(next) => theta = next,
            Err((x, dt)) => {
                let boundary = Sample {
                    t: (k - 1) as f64 * params.h + dt,
                    kl: manifold::kl_at(model, &x, q)?,
                    theta: x,
                };
                return Err(Error::BoundaryStall {
                    partial: Box::new(Trajectory {
                        h: params.h,
                        samples,
                        termination: Termination::BoundaryHit,
                        boundary: Some(boundary),
                    }),
                });
            }
        }
        let p = model.eval_interior(&theta)?;
        samples.push(Sample {
            t: k as f64 * params.h,
            theta: theta.clone(),
            kl: manifold::kl(&p, q),
        });
    }
    let termination = {
        let grad = manifold::kl_grad_raw(model, &theta, q)?;
        if grad.norm() < params.grad_tol {
            Termination::Converged
        } else {
            Termination::MaxSteps
        }
    };
    Ok(Trajectory {
        h: params.h,
        samples,
        termination,
        boundary: None,
    })
}

/// Rate from the three samples `KL(0), KL(T), KL(2T)`; `None` when the trajectory
/// starts at equilibrium (`|KL(T) − KL(0)| < 1e-14`).
pub fn rate_from_samples(k0: f64, k1: f64, k2: f64, t: f64, estimator: RateEstimator) -> Option<f64> {
    let drop = k0 - k1;
    if drop.abs() < RATE_DENOM_TOL {
        return None;
    }
    Some(match estimator {
        RateEstimator::SecondDifference => (k2 - 2.0 * k1 + k0) / (2.0 * t * drop),
        RateEstimator::LogRatio => {
            let ratio = (k1 - k2) / drop;
            if ratio <= 0.0 {
                f64::INFINITY
            } else {
                -ratio.ln() / (2.0 * t)
            }
        }
    })
}

/// Result of [`convergence_rate_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub k: f64,
    /// Initial condition attaining the minimum.
    pub argmin: Vec<f64>,
    /// Per-initial rates, `None` for skipped (equilibrium) initials.
    pub per_initial: Vec<Option<f64>>,
}

/// `KL` at `0`, `T` and `2T` along the explicit-Euler trajectory from each initial.
pub fn rate_samples(
    model: &StatisticalModel,
    graph: &Graph,
    q: &Distribution,
    initials: &[Vec<f64>],
    h: f64,
    t: f64,
) -> Result<Vec<[f64; 3]>> {
    let params = FlowParams::euler(h);
    params.validate()?;
    if initials.is_empty() {
        return Err(Error::Config("no initial conditions given".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Config(format!("terminal time T must be positive, got {t}")));
    }
    let ratio = t / h;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!("T = {t} is not a multiple of h = {h}")));
    }
    initials
        .iter()
        .map(|theta0| {
            let traj = fpe_trajectory(model, graph, theta0, q, &params, 2.0 * t)?;
            match (traj.kl_at(0.0), traj.kl_at(t), traj.kl_at(2.0 * t)) {
                (Some(a), Some(b), Some(c)) => Ok([a, b, c]),
                _ => Err(Error::Inconsistency("trajectory ended before 2T without converging".into())),
            }
        })
        .collect()
}

/// Minimum rate over initials from [`rate_samples`] output.
pub fn rate_from_kl_samples(
    samples: &[[f64; 3]],
    initials: &[Vec<f64>],
    t: f64,
    estimator: RateEstimator,
) -> Result<RateEstimate> {
    let per_initial: Vec<Option<f64>> = samples
        .iter()
        .map(|s| rate_from_samples(s[0], s[1], s[2], t, estimator))
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (i, r) in per_initial.iter().enumerate() {
        if let Some(r) = *r {
            // ties resolve to the lexicographically smallest initial, so the result does not
            // depend on the order of `initials`
            let better = match best {
                None => true,
                Some((b, j)) => r < b || (r == b && lex_less(&initials[i], &initials[j])),
            };
            if better {
                best = Some((r, i));
            }
        }
    }
    let (k, idx) = best.ok_or(Error::DegenerateRate)?;
    Ok(RateEstimate {
        k,
        argmin: initials[idx].clone(),
        per_initial,
    })
}

/// Uniform convergence rate `K`: the minimum over initial conditions of the rate read off
/// `KL` at `0`, `T` and `2T` along explicit-Euler trajectories.
pub fn convergence_rate_k(
    model: &StatisticalModel,
    graph: &Graph,
    q: &Distribution,
    initials: &[Vec<f64>],
    h: f64,
    t: f64,
    estimator: RateEstimator,
) -> Result<RateEstimate> {
    let samples = rate_samples(model, graph, q, initials, h, t)?;
    rate_from_kl_samples(&samples, initials, t, estimator)
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Least-squares slope of `−ln(KL − KL*)` against `t`, using the samples whose excess
/// `KL − KL*` lies in `[lo, hi] · (KL(0) − KL*)`.
pub fn fitted_decay_exponent(traj: &Trajectory, kl_star: f64, lo: f64, hi: f64) -> Option<f64> {
    let e0 = traj.samples.first()?.kl - kl_star;
    if e0 <= 0.0 {
        return None;
    }
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter_map(|s| {
            let e = s.kl - kl_star;
            (e > 0.0 && e >= lo * e0 && e <= hi * e0).then(|| (s.t, e.ln()))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Writes several trajectories into one CSV with a leading `initial` index column.
pub fn write_trajectories_csv(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let d = trajs
        .first()
        .and_then(|t| t.samples.first())
        .map_or(0, |s| s.theta.len());
    let mut out = Vec::new();
    let mut header = String::from("initial,t");
    for k in 1..=d {
        header.push_str(&format!(",theta_{k}"));
    }
    header.push_str(",kl\n");
    out.extend_from_slice(header.as_bytes());
    for (i, tr) in trajs.iter().enumerate() {
        for s in &tr.samples {
            let mut line = format!("{i},{}", s.t);
            for x in &s.theta {
                line.push_str(&format!(",{x}"));
            }
            line.push_str(&format!(",{}\n", s.kl));
            out.extend_from_slice(line.as_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    f.write_all(&out).map_err(|e| Error::Io { path: path.into(), source: e })
}
