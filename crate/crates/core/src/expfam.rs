//! One-dimensional exponential families `p(θ) ∝ exp(θ c)` and the sweep over
//! sufficient statistics and ground metrics on three states.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_metric::Graph;
use crate::manifold::{ParamBox, Parametrization, StatisticalModel};

/// Number of sufficient statistics on the half circle in the default sweep.
pub const DEFAULT_PHIS: usize = 30;

/// Parameter domains used by the experiments, as `(θ_min, θ_max)`.
pub mod presets {
    pub const NARROW: (f64, f64) = (-0.5, 0.5);
    pub const UNIT: (f64, f64) = (-1.0, 1.0);
    pub const MEDIUM: (f64, f64) = (-2.0, 2.0);
    pub const WIDE: (f64, f64) = (-4.0, 4.0);
}

/// `p(θ) = exp(θ c) / Z(θ)` with a unit-norm sufficient statistic `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialFamily1D {
    c: DVector<f64>,
}

impl ExponentialFamily1D {
    pub fn new(c: &[f64]) -> Result<Self> {
        if c.len() < 2 {
            return Err(Error::Config("sufficient statistic needs at least 2 states".into()));
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("sufficient statistic must have unit norm, got {norm}")));
        }
        Ok(ExponentialFamily1D {
            c: DVector::from_column_slice(c),
        })
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Softmax of `θ c`, shifted by `max θc_i` before exponentiation.
    pub fn probabilities(&self, theta: f64) -> DVector<f64> {
        let shift = self.c.iter().map(|ci| theta * ci).fold(f64::NEG_INFINITY, f64::max);
        let e = self.c.map(|ci| (theta * ci - shift).exp());
        let z = e.sum();
        e / z
    }

    /// The family as a statistical model on `[a, b]`.
    pub fn model(&self, a: f64, b: f64) -> Result<StatisticalModel> {
        StatisticalModel::new(Arc::new(self.clone()), ParamBox::interval(a, b)?)
    }
}

impl Parametrization for ExponentialFamily1D {
    fn dim(&self) -> usize {
        1
    }

    fn n_states(&self) -> usize {
        self.c.len()
    }

    fn eval(&self, theta: &[f64]) -> Option<DVector<f64>> {
        let t = *theta.first()?;
        t.is_finite().then(|| self.probabilities(t))
    }

    /// `∂_θ p = p ∘ (c − 𝔼_p c)`.
    fn jacobian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let p = self.probabilities(theta[0]);
        let mean = p.dot(&self.c);
        let col = p.component_mul(&self.c.add_scalar(-mean));
        Some(DMatrix::from_column_slice(self.c.len(), 1, col.as_slice()))
    }

    /// `∂²_θ p_i = p_i ((c_i − 𝔼c)² − Var c)`.
    fn hessians(&self, theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let p = self.probabilities(theta[0]);
        let mean = p.dot(&self.c);
        let centred = self.c.add_scalar(-mean);
        let var = p.dot(&centred.component_mul(&centred));
        Some(
            p.iter()
                .zip(centred.iter())
                .map(|(pi, ci)| DMatrix::from_element(1, 1, pi * (ci * ci - var)))
                .collect(),
        )
    }
}

/// Orthonormal basis `{u, v}` of the sum-zero plane in `ℝ³`.
pub fn sum_zero_basis() -> ([f64; 3], [f64; 3]) {
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    ([1.0 / s2, -1.0 / s2, 0.0], [1.0 / s6, 1.0 / s6, -2.0 / s6])
}

/// Family with `c(φ) = cos φ · u + sin φ · v`, `φ ∈ [0, π)`.
pub fn family_from_angle(phi: f64) -> Result<ExponentialFamily1D> {
    if !(0.0..PI).contains(&phi) {
        return Err(Error::Domain {
            theta: vec![phi],
            min: vec![0.0],
            max: vec![PI],
        });
    }
    let (u, v) = sum_zero_basis();
    let (s, c) = phi.sin_cos();
    let stat: Vec<f64> = (0..3).map(|i| c * u[i] + s * v[i]).collect();
    // renormalise away the last ulp so the unit-norm invariant holds to 1e-12
    let norm = stat.iter().map(|x| x * x).sum::<f64>().sqrt();
    ExponentialFamily1D::new(&stat.iter().map(|x| x / norm).collect::<Vec<_>>())
}

/// `φ_k = kπ / count` for `k = 0..count`.
pub fn sweep_angles(count: usize) -> Vec<f64> {
    (0..count).map(|k| k as f64 * PI / count as f64).collect()
}

/// Default ground metrics `(ω₁₂, ω₂₃, ω₁₃)`, each summing to one: the three single-edge
/// removals, the uniform triple, and the six interior lattice points of the weight simplex
/// with denominator 5.
pub fn default_omegas() -> Vec<[f64; 3]> {
    let t = 1.0 / 3.0;
    let mut out = vec![[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [t, t, t]];
    for w in [[1, 1, 3], [1, 3, 1], [3, 1, 1], [1, 2, 2], [2, 1, 2], [2, 2, 1]] {
        out.push(w.map(|x| x as f64 / 5.0));
    }
    out
}

/// One cell of the sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub family_index: usize,
    pub phi: f64,
    pub family: ExponentialFamily1D,
    pub omega: [f64; 3],
    pub graph: Graph,
}

/// Families (outer) crossed with ground metrics (inner).
pub fn sweep_grid_with(phis: usize, omegas: &[[f64; 3]]) -> Result<Vec<SweepCell>> {
    let mut out = Vec::with_capacity(phis * omegas.len());
    for (family_index, phi) in sweep_angles(phis).into_iter().enumerate() {
        let family = family_from_angle(phi)?;
        for &omega in omegas {
            out.push(SweepCell {
                family_index,
                phi,
                family: family.clone(),
                omega,
                graph: Graph::triangle(omega)?,
            });
        }
    }
    Ok(out)
}

/// The default 30 × 10 sweep.
pub fn sweep_grid() -> Vec<SweepCell> {
    sweep_grid_with(DEFAULT_PHIS, &default_omegas()).expect("default sweep is well formed")
}

/// Reference distribution choice in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QSpec {
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for QSpec {
    fn default() -> Self {
        QSpec::Named("uniform".into())
    }
}

impl QSpec {
    pub fn resolve(&self, n: usize) -> Result<crate::ground_metric::Distribution> {
        match self {
            QSpec::Named(s) if s == "uniform" => Ok(crate::ground_metric::Distribution::uniform(n)),
            QSpec::Named(s) => Err(Error::Config(format!("unknown reference distribution {s:?}"))),
            QSpec::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::Config(format!("q has {} entries, expected {n}", v.len())));
                }
                crate::ground_metric::Distribution::from_slice(v)
            }
        }
    }
}

/// Sweep configuration: `{"phis": 30, "omegas": [[...], ...], "theta_domain": [a, b], "q": "uniform"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_phis")]
    pub phis: usize,
    #[serde(default = "default_omegas")]
    pub omegas: Vec<[f64; 3]>,
    #[serde(default = "default_theta_domain")]
    pub theta_domain: [f64; 2],
    #[serde(default)]
    pub q: QSpec,
}

fn default_phis() -> usize {
    DEFAULT_PHIS
}

fn default_theta_domain() -> [f64; 2] {
    [presets::UNIT.0, presets::UNIT.1]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            phis: DEFAULT_PHIS,
            omegas: default_omegas(),
            theta_domain: default_theta_domain(),
            q: QSpec::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{self, metric_f};
    use proptest::prelude::*;

    #[test]
    fn basis_angles() {
        let f0 = family_from_angle(0.0).unwrap();
        let s2 = 2f64.sqrt();
        assert!((f0.c() - DVector::from_column_slice(&[1.0 / s2, -1.0 / s2, 0.0])).amax() < 1e-15);
        let f90 = family_from_angle(PI / 2.0).unwrap();
        let s6 = 6f64.sqrt();
        assert!((f90.c() - DVector::from_column_slice(&[1.0 / s6, 1.0 / s6, -2.0 / s6])).amax() < 1e-15);
        assert!(family_from_angle(PI).is_err());
        assert!(family_from_angle(-0.1).is_err());
    }

    #[test]
    fn thirty_angles() {
        let a = sweep_angles(30);
        assert_eq!(a.len(), 30);
        assert!((a[29] - 29.0 * PI / 30.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_examples() {
        let f = family_from_angle(0.7).unwrap();
        let p0 = f.probabilities(0.0);
        assert!(p0.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        // adding a constant to c leaves p unchanged
        let shifted = f.c().add_scalar(0.37);
        let raw = shifted.map(|ci| (0.8 * ci).exp());
        let p_shift = &raw / raw.sum();
        assert!((p_shift - f.probabilities(0.8)).amax() < 1e-15);
        // concentrates on argmax c
        let p = f.probabilities(50.0);
        let arg = f.c().imax();
        assert!((p[arg] - 1.0).abs() < 1e-10);
        // no overflow for huge θ
        assert!(f.probabilities(1e4).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn sweep_shape() {
        let grid = sweep_grid();
        assert_eq!(grid.len(), 300);
        assert!(grid.iter().any(|c| c.omega == [0.5, 0.5, 0.0]));
        let omegas = default_omegas();
        assert_eq!(omegas.len(), 10);
        for w in &omegas {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            Graph::triangle(*w).unwrap();
        }
    }

    #[test]
    fn analytic_jacobian_matches_softmax_derivative() {
        let f = family_from_angle(1.1).unwrap();
        let m = f.model(-2.0, 2.0).unwrap();
        let theta = 0.6;
        let j = manifold::jacobian(&m, &[theta]).unwrap();
        let fd = manifold::fd_jacobian(&m, &[theta]).unwrap();
        assert!((&j - &fd).amax() < 1e-8);
        assert!(j.column(0).sum().abs() < 1e-15);
    }

    #[test]
    fn analytic_hessian_matches_fd() {
        let f = family_from_angle(2.3).unwrap();
        let m = f.model(-2.0, 2.0).unwrap();
        let h = manifold::second_diff_p(&m, &[-0.7]).unwrap();
        let s = 1e-4;
        let pp = f.probabilities(-0.7 + s);
        let p0 = f.probabilities(-0.7);
        let pm = f.probabilities(-0.7 - s);
        for i in 0..3 {
            let fd = (pp[i] - 2.0 * p0[i] + pm[i]) / (s * s);
            assert!((h[i][(0, 0)] - fd).abs() < 1e-4);
        }
        let total: f64 = h.iter().map(|m| m[(0, 0)]).sum();
        assert!(total.abs() < 1e-15);
    }

    #[test]
    fn sweep_config_json() {
        let cfg: SweepConfig = serde_json::from_str(
            r#"{"phis": 4, "omegas": [[0.5, 0.5, 0.0]], "theta_domain": [-0.5, 0.5], "q": "uniform"}"#,
        )
        .unwrap();
        assert_eq!(cfg.phis, 4);
        assert_eq!(sweep_grid_with(cfg.phis, &cfg.omegas).unwrap().len(), 4);
        let q: SweepConfig = serde_json::from_str(r#"{"q": [0.2, 0.3, 0.5]}"#).unwrap();
        assert!(q.q.resolve(3).is_ok());
        assert!(q.q.resolve(4).is_err());
    }

    proptest! {
        #[test]
        fn fisher_equals_variance(phi in 0.0f64..3.1, theta in -3.0f64..3.0) {
            let f = family_from_angle(phi).unwrap();
            let m = f.model(-3.0, 3.0).unwrap();
            let gf = metric_f(&m, &[theta]).unwrap().matrix[(0, 0)];
            let p = f.probabilities(theta);
            let mean = p.dot(f.c());
            let var: f64 = p.iter().zip(f.c().iter()).map(|(pi, ci)| pi * (ci - mean).powi(2)).sum();
            prop_assert!((gf - var).abs() < 1e-10);
            if theta == 0.0 {
                prop_assert!((gf - 1.0 / 3.0).abs() < 1e-12);
            }
        }

        #[test]
        fn mean_statistic_increases(phi in 0.0f64..3.1, theta in -3.0f64..3.0) {
            let f = family_from_angle(phi).unwrap();
            let h = 1e-4;
            let mean = |t: f64| f.probabilities(t).dot(f.c());
            prop_assert!(mean(theta + h) - mean(theta - h) > 0.0);
        }
    }

    #[test]
    fn fisher_at_origin_is_one_third() {
        for phi in sweep_angles(30) {
            let m = family_from_angle(phi).unwrap().model(-1.0, 1.0).unwrap();
            let gf = metric_f(&m, &[0.0]).unwrap().matrix[(0, 0)];
            assert!((gf - 1.0 / 3.0).abs() < 1e-14);
        }
    }
}
