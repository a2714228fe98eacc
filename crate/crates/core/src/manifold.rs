//! Parametric statistical models `θ ↦ p(θ)` and their Wasserstein / Fisher–Rao geometry.
//!
//! The Wasserstein metric on parameter space is the pullback
//! `G_W(θ) = Jᵀ L(p(θ))† J` of the simplex metric through the Jacobian `J` of the
//! parametrization. Everything here is a pure function of its inputs.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_metric::{self, Distribution, Graph};
use crate::linalg;

/// Relative finite-difference step; the step for coordinate `k` is `FD_REL_STEP · max(1, |θ_k|)`.
pub const FD_REL_STEP: f64 = 1e-4;
/// Slack when testing membership of the parameter box (grid endpoints land exactly on it).
const BOX_SLACK: f64 = 1e-12;

pub fn fd_step(theta_k: f64) -> f64 {
    FD_REL_STEP * theta_k.abs().max(1.0)
}

/// A parametrization of (part of) the open probability simplex.
///
/// Implementors provide `eval`; analytic first and second differentials are optional and
/// fall back to central finite differences.
pub trait Parametrization: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn n_states(&self) -> usize;
    /// Raw `p(θ)`. May be called slightly outside the parameter box by finite-difference
    /// stencils; return `None` where the map is undefined.
    fn eval(&self, theta: &[f64]) -> Option<DVector<f64>>;
    fn jacobian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    /// Hessians `d_θθ p_i`, one `d×d` matrix per state.
    fn hessians(&self, _theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

/// Axis-aligned parameter box `[θ_min, θ_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub theta_min: Vec<f64>,
    pub theta_max: Vec<f64>,
}

impl ParamBox {
    pub fn new(theta_min: Vec<f64>, theta_max: Vec<f64>) -> Result<Self> {
        if theta_min.len() != theta_max.len() || theta_min.is_empty() {
            return Err(Error::Config("domain bounds must be non-empty and of equal length".into()));
        }
        if theta_min.iter().zip(&theta_max).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Config(format!("invalid domain [{theta_min:?}, {theta_max:?}]")));
        }
        Ok(ParamBox { theta_min, theta_max })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        ParamBox::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.theta_min.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.theta_min.iter().zip(&self.theta_max))
                .all(|(t, (a, b))| *t >= a - BOX_SLACK && *t <= b + BOX_SLACK)
    }

    /// Tensor grid with `points` evenly spaced values per axis (endpoints included).
    pub fn uniform_grid(&self, points: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|k| linspace(self.theta_min[k], self.theta_max[k], points))
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for &x in axis {
                    let mut v = prefix.clone();
                    v.push(x);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|k| if mask >> k & 1 == 1 { self.theta_max[k] } else { self.theta_min[k] })
                    .collect()
            })
            .collect()
    }

    fn domain_error(&self, theta: &[f64]) -> Error {
        Error::Domain {
            theta: theta.to_vec(),
            min: self.theta_min.clone(),
            max: self.theta_max.clone(),
        }
    }
}

pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// A parametrization restricted to a parameter box. Cheap to clone and shareable across threads.
#[derive(Debug, Clone)]
pub struct StatisticalModel {
    param: Arc<dyn Parametrization>,
    domain: ParamBox,
}

impl StatisticalModel {
    pub fn new(param: Arc<dyn Parametrization>, domain: ParamBox) -> Result<Self> {
        if domain.dim() != param.dim() {
            return Err(Error::Config(format!(
                "domain has dimension {} but the model has {}",
                domain.dim(),
                param.dim()
            )));
        }
        if param.dim() + 1 > param.n_states() {
            return Err(Error::Config(format!(
                "parameter dimension {} exceeds n - 1 = {}",
                param.dim(),
                param.n_states() - 1
            )));
        }
        let model = StatisticalModel { param, domain };
        let centre: Vec<f64> = model
            .domain
            .theta_min
            .iter()
            .zip(&model.domain.theta_max)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        for corner in model.domain.corners().into_iter().chain(std::iter::once(centre)) {
            model.distribution(&corner).map_err(|e| {
                Error::Config(format!("model is not interior on its domain at {corner:?}: {e}"))
            })?;
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.param.dim()
    }

    pub fn n_states(&self) -> usize {
        self.param.n_states()
    }

    pub fn domain(&self) -> &ParamBox {
        &self.domain
    }

    pub fn parametrization(&self) -> &Arc<dyn Parametrization> {
        &self.param
    }

    /// Same parametrization on another box.
    pub fn with_domain(&self, domain: ParamBox) -> Result<Self> {
        StatisticalModel::new(self.param.clone(), domain)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        let c = self.domain.corners();
        self.param.jacobian(&c[0]).is_some()
    }

    pub fn check_domain(&self, theta: &[f64]) -> Result<()> {
        if self.domain.contains(theta) {
            Ok(())
        } else {
            Err(self.domain.domain_error(theta))
        }
    }

    /// `p(θ)` for `θ` in the parameter box.
    pub fn distribution(&self, theta: &[f64]) -> Result<Distribution> {
        self.check_domain(theta)?;
        self.eval_interior(theta)
    }

    /// `p(θ)` without the box check, still required to be an interior distribution.
    pub fn eval_interior(&self, theta: &[f64]) -> Result<Distribution> {
        if theta.len() != self.dim() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        let p = self
            .param
            .eval(theta)
            .ok_or_else(|| Error::StencilMargin { theta: theta.to_vec() })?;
        if p.len() != self.n_states() {
            return Err(Error::Config("parametrization returned wrong number of states".into()));
        }
        Distribution::new(p)
    }

    pub(crate) fn eval_for_stencil(&self, theta: &[f64]) -> Result<Distribution> {
        self.eval_interior(theta).map_err(|e| match e {
            Error::NotInterior(_) | Error::StencilMargin { .. } => {
                Error::StencilMargin { theta: theta.to_vec() }
            }
            other => other,
        })
    }

    /// Whether `p(θ)` is defined and interior (used for step rejection).
    pub fn is_admissible(&self, theta: &[f64]) -> bool {
        self.domain.contains(theta) && self.eval_interior(theta).is_ok()
    }
}

/// Which metric a [`MetricTensor`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricFlavor {
    Wasserstein,
    FisherRao,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    pub matrix: DMatrix<f64>,
    pub flavor: MetricFlavor,
    pub theta: Vec<f64>,
}

impl MetricTensor {
    pub fn quadratic_form(&self, a: &DVector<f64>) -> f64 {
        (a.transpose() * &self.matrix * a)[(0, 0)]
    }
}

fn offset(theta: &[f64], k: usize, h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    t[k] += h;
    t
}

/// Jacobian without the box check (analytic when available, else central differences).
pub(crate) fn jacobian_raw(model: &StatisticalModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(j) = model.param.jacobian(theta) {
        return Ok(j);
    }
    fd_jacobian(model, theta)
}

pub(crate) fn fd_jacobian(model: &StatisticalModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    let (n, d) = (model.n_states(), model.dim());
    let mut j = DMatrix::zeros(n, d);
    for k in 0..d {
        let h = fd_step(theta[k]);
        let plus = model.eval_for_stencil(&offset(theta, k, h))?;
        let minus = model.eval_for_stencil(&offset(theta, k, -h))?;
        j.set_column(k, &((plus.as_vector() - minus.as_vector()) / (2.0 * h)));
    }
    Ok(j)
}

/// `J_θ p(θ) ∈ ℝ^{n×d}`; every column sums to zero.
pub fn jacobian(model: &StatisticalModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    model.check_domain(theta)?;
    model.eval_interior(theta)?;
    jacobian_raw(model, theta)
}

/// `G_W(θ)` without domain or conditioning checks; used inside stencils and integrators.
pub(crate) fn metric_w_raw(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    let p = model.eval_for_stencil(theta)?;
    let j = jacobian_raw(model, theta)?;
    let lp = ground_metric::laplacian_pinv(graph, &p)?;
    Ok(linalg::symmetrize(&(j.transpose() * lp * j)))
}

/// Wasserstein metric tensor `G_W(θ) = Jᵀ L(p(θ))† J`.
pub fn metric_w(model: &StatisticalModel, graph: &Graph, theta: &[f64]) -> Result<MetricTensor> {
    check_graph(model, graph)?;
    model.check_domain(theta)?;
    model.eval_interior(theta)?;
    let g = metric_w_raw(model, graph, theta)?;
    linalg::check_positive_definite(&g, "G_W")?;
    Ok(MetricTensor {
        matrix: g,
        flavor: MetricFlavor::Wasserstein,
        theta: theta.to_vec(),
    })
}

pub(crate) fn check_graph(model: &StatisticalModel, graph: &Graph) -> Result<()> {
    if graph.n() != model.n_states() {
        return Err(Error::Config(format!(
            "graph has {} nodes but the model has {} states",
            graph.n(),
            model.n_states()
        )));
    }
    Ok(())
}

/// Fisher–Rao metric `G_F(θ) = Σ_i p_i ∂log p_i ∂log p_iᵀ = Jᵀ diag(1/p) J`.
pub fn metric_f(model: &StatisticalModel, theta: &[f64]) -> Result<MetricTensor> {
    model.check_domain(theta)?;
    let p = model.eval_interior(theta)?;
    let j = jacobian_raw(model, theta)?;
    let g = fisher_from(&p, &j);
    linalg::check_positive_definite(&g, "G_F")?;
    Ok(MetricTensor {
        matrix: g,
        flavor: MetricFlavor::FisherRao,
        theta: theta.to_vec(),
    })
}

pub(crate) fn fisher_from(p: &Distribution, j: &DMatrix<f64>) -> DMatrix<f64> {
    let d = j.ncols();
    let mut g = DMatrix::zeros(d, d);
    for (i, &pi) in p.as_slice().iter().enumerate() {
        let row = j.row(i);
        // p_i ∂log p_i ∂log p_iᵀ with ∂log p_i = ∂p_i / p_i
        g += row.transpose() * row / pi;
    }
    linalg::symmetrize(&g)
}

/// `D_KL(p ‖ q) = Σ p_i log(p_i / q_i)`.
pub fn kl(p: &Distribution, q: &Distribution) -> f64 {
    p.as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub(crate) fn log_ratio(p: &Distribution, q: &Distribution) -> DVector<f64> {
    DVector::from_iterator(
        p.len(),
        p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (a / b).ln()),
    )
}

pub(crate) fn kl_grad_raw(
    model: &StatisticalModel,
    theta: &[f64],
    q: &Distribution,
) -> Result<DVector<f64>> {
    let p = model.eval_for_stencil(theta)?;
    let j = jacobian_raw(model, theta)?;
    Ok(j.transpose() * log_ratio(&p, q))
}

/// Euclidean gradient of `θ ↦ D_KL(p(θ) ‖ q)`, i.e. `Jᵀ log(p/q)` (the `+1` term drops since `1ᵀJ = 0`).
pub fn kl_grad(model: &StatisticalModel, theta: &[f64], q: &Distribution) -> Result<DVector<f64>> {
    check_q(model, q)?;
    model.check_domain(theta)?;
    model.eval_interior(theta)?;
    kl_grad_raw(model, theta, q)
}

pub(crate) fn check_q(model: &StatisticalModel, q: &Distribution) -> Result<()> {
    if q.len() != model.n_states() {
        return Err(Error::Config(format!(
            "reference distribution has {} states, model has {}",
            q.len(),
            model.n_states()
        )));
    }
    Ok(())
}

/// `θ ↦ D_KL(p(θ) ‖ q)` with the box check.
pub fn kl_at(model: &StatisticalModel, theta: &[f64], q: &Distribution) -> Result<f64> {
    Ok(kl(&model.distribution(theta)?, q))
}

pub(crate) fn second_diff_raw(model: &StatisticalModel, theta: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    if let Some(h) = model.param.hessians(theta) {
        return Ok(h);
    }
    let (n, d) = (model.n_states(), model.dim());
    let mut out = vec![DMatrix::zeros(d, d); n];
    if model.param.jacobian(theta).is_some() {
        // differentiate the analytic Jacobian once
        for k in 0..d {
            let h = fd_step(theta[k]);
            let tp = offset(theta, k, h);
            let tm = offset(theta, k, -h);
            model.eval_for_stencil(&tp)?;
            model.eval_for_stencil(&tm)?;
            let jp = jacobian_raw(model, &tp)?;
            let jm = jacobian_raw(model, &tm)?;
            let dj = (jp - jm) / (2.0 * h);
            for (i, m) in out.iter_mut().enumerate() {
                for a in 0..d {
                    m[(a, k)] = dj[(i, a)];
                }
            }
        }
    } else {
        let p0 = model.eval_for_stencil(theta)?;
        for a in 0..d {
            for b in a..d {
                let (ha, hb) = (fd_step(theta[a]), fd_step(theta[b]));
                let entry: DVector<f64> = if a == b {
                    let pp = model.eval_for_stencil(&offset(theta, a, ha))?;
                    let pm = model.eval_for_stencil(&offset(theta, a, -ha))?;
                    (pp.as_vector() - p0.as_vector() * 2.0 + pm.as_vector()) / (ha * ha)
                } else {
                    let shift = |sa: f64, sb: f64| {
                        let mut t = theta.to_vec();
                        t[a] += sa * ha;
                        t[b] += sb * hb;
                        model.eval_for_stencil(&t)
                    };
                    let (pp, pm, mp, mm) =
                        (shift(1.0, 1.0)?, shift(1.0, -1.0)?, shift(-1.0, 1.0)?, shift(-1.0, -1.0)?);
                    (pp.as_vector() - pm.as_vector() - mp.as_vector() + mm.as_vector())
                        / (4.0 * ha * hb)
                };
                for (i, m) in out.iter_mut().enumerate() {
                    m[(a, b)] = entry[i];
                    m[(b, a)] = entry[i];
                }
            }
        }
    }
    for m in &mut out {
        *m = linalg::symmetrize(m);
    }
    Ok(out)
}

/// Hessians `d_θθ p_i(θ)` for every state `i`; they sum to the zero matrix.
pub fn second_diff_p(model: &StatisticalModel, theta: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    model.check_domain(theta)?;
    model.eval_interior(theta)?;
    second_diff_raw(model, theta)
}

/// Central-difference partial derivatives `∂_l G_W`, `l = 0..d`.
pub(crate) fn metric_w_derivatives(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    step: Option<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    (0..model.dim())
        .map(|l| {
            let h = step.unwrap_or_else(|| fd_step(theta[l]));
            let gp = metric_w_raw(model, graph, &offset(theta, l, h))?;
            let gm = metric_w_raw(model, graph, &offset(theta, l, -h))?;
            Ok((gp - gm) / (2.0 * h))
        })
        .collect()
}

pub(crate) fn christoffel_from(g: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let d = g.nrows();
    let ginv = linalg::spd_inverse(g, "G_W")?;
    let mut gamma = vec![DMatrix::zeros(d, d); d];
    for (k, gk) in gamma.iter_mut().enumerate() {
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                gk[(i, j)] = 0.5 * s;
                gk[(j, i)] = 0.5 * s;
            }
        }
    }
    Ok(gamma)
}

pub(crate) fn christoffel_raw(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    step: Option<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let g = metric_w_raw(model, graph, theta)?;
    let dg = metric_w_derivatives(model, graph, theta, step)?;
    christoffel_from(&g, &dg)
}

/// `G_W(θ)` together with its partials `∂_l G_W`, differentiating the pullback in closed form:
/// `∂_l G = (∂_l J)ᵀ L† J + Jᵀ L† ∂_l J − Jᵀ L† (∂_l L) L† J`, where `∂_l L = L(J e_l)` since
/// `L` is linear in `p` and its kernel stays the constants.
pub(crate) fn metric_w_jet(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let p = model.eval_for_stencil(theta)?;
    let j = jacobian_raw(model, theta)?;
    let hess = second_diff_raw(model, theta)?;
    let lp = ground_metric::laplacian_pinv(graph, &p)?;
    let lpj = &lp * &j;
    let g = linalg::symmetrize(&(j.transpose() * &lpj));
    let (n, d) = (model.n_states(), model.dim());
    let mut dg = Vec::with_capacity(d);
    for l in 0..d {
        let mut dj = DMatrix::zeros(n, d);
        for (i, h) in hess.iter().enumerate() {
            for a in 0..d {
                dj[(i, a)] = h[(a, l)];
            }
        }
        let dp: Vec<f64> = j.column(l).iter().copied().collect();
        let dl = ground_metric::laplacian_raw(graph, &dp);
        let cross = dj.transpose() * &lpj;
        let m = &cross + cross.transpose() - lpj.transpose() * dl * &lpj;
        dg.push(linalg::symmetrize(&m));
    }
    Ok((g, dg))
}

/// Christoffel symbols from [`metric_w_jet`]; used by geodesic integration.
pub(crate) fn christoffel_analytic(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let (g, dg) = metric_w_jet(model, graph, theta)?;
    christoffel_from(&g, &dg)
}

/// Wasserstein Christoffel symbols `Γ^k_{ij}` (one symmetric `d×d` matrix per `k`),
/// from central differences of `G_W` with step `fd_step` (default `1e-4·max(1,|θ_l|)`).
pub fn christoffel_w(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    fd_step: Option<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    check_graph(model, graph)?;
    model.check_domain(theta)?;
    model.eval_interior(theta)?;
    christoffel_raw(model, graph, theta, fd_step)
}

/// `Γ(v, v)` as a vector: component `k` is `vᵀ Γ^k v`.
pub fn contract(gamma: &[DMatrix<f64>], v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(gamma.len(), gamma.iter().map(|gk| (v.transpose() * gk * v)[(0, 0)]))
}

/// Relative Fisher information `ℐ = ∇KLᵀ G_W⁻¹ ∇KL`, the squared Wasserstein gradient norm of KL.
pub fn relative_fisher_info(
    model: &StatisticalModel,
    graph: &Graph,
    theta: &[f64],
    q: &Distribution,
) -> Result<f64> {
    let g = metric_w(model, graph, theta)?;
    let grad = kl_grad(model, theta, q)?;
    let nat = linalg::spd_solve(&g.matrix, &grad, "G_W")?;
    Ok(grad.dot(&nat).max(0.0))
}

/// Full-simplex chart: `θ = (p_1, …, p_{n-1})`, `p_n = 1 − Σθ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexChart {
    pub n: usize,
}

impl SimplexChart {
    /// The tangent vector `σ ∈ ℝⁿ` (sum zero) embedded from a chart direction `a`.
    pub fn embed_tangent(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(self.n);
        s.rows_mut(0, self.n - 1).copy_from(a);
        s[self.n - 1] = -a.sum();
        s
    }
}

impl Parametrization for SimplexChart {
    fn dim(&self) -> usize {
        self.n - 1
    }

    fn n_states(&self) -> usize {
        self.n
    }

    fn eval(&self, theta: &[f64]) -> Option<DVector<f64>> {
        if theta.len() != self.n - 1 {
            return None;
        }
        let mut p = DVector::zeros(self.n);
        for (i, &t) in theta.iter().enumerate() {
            p[i] = t;
        }
        p[self.n - 1] = 1.0 - theta.iter().sum::<f64>();
        if p.iter().any(|&x| x <= 0.0) {
            return None;
        }
        Some(p)
    }

    fn jacobian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.n - 1;
        let mut j = DMatrix::zeros(self.n, d);
        for k in 0..d {
            j[(k, k)] = 1.0;
            j[(self.n - 1, k)] = -1.0;
        }
        Some(j)
    }

    fn hessians(&self, _theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let d = self.n - 1;
        Some(vec![DMatrix::zeros(d, d); self.n])
    }
}

/// A model given only by its map; all differentials come from finite differences.
pub struct FnModel<F> {
    pub dim: usize,
    pub n: usize,
    pub map: F,
}

impl<F> fmt::Debug for FnModel<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel").field("dim", &self.dim).field("n", &self.n).finish()
    }
}

impl<F> Parametrization for FnModel<F>
where
    F: Fn(&[f64]) -> Option<DVector<f64>> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_states(&self) -> usize {
        self.n
    }

    fn eval(&self, theta: &[f64]) -> Option<DVector<f64>> {
        (self.map)(theta)
    }
}
