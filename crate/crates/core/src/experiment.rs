//! The family × ground-metric sweep comparing `κ` with `K`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curvature;
use crate::error::{Error, Result};
use crate::expfam::{sweep_grid_with, QSpec, SweepCell, SweepConfig};
use crate::flow::{self, RateEstimator};
use crate::report::SweepRow;

/// Numerical settings shared by every sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub h: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub initials_per_dim: usize,
    pub grid_points: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            h: flow::DEFAULT_H,
            t: flow::DEFAULT_T,
            initials_per_dim: flow::DEFAULT_INITIALS_PER_DIM,
            grid_points: curvature::DEFAULT_GRID_POINTS,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.t > 0.0) {
            return Err(Error::Config(format!("need h > 0 and T > 0 (h = {}, T = {})", self.h, self.t)));
        }
        if self.initials_per_dim == 0 || self.grid_points == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        Ok(())
    }
}

/// `(κ, K, K_log)` for one family on one ground metric.
pub fn evaluate_cell(cell: &SweepCell, domain: [f64; 2], q: &QSpec, s: &SweepSettings) -> Result<(f64, f64, f64)> {
    let model = cell.family.model(domain[0], domain[1])?;
    let q = q.resolve(3)?;
    let grid = model.domain().uniform_grid(s.grid_points);
    let kappa = curvature::ricci_lower_bound(&model, &cell.graph, &q, &grid)?.kappa;
    let initials = model.domain().uniform_grid(s.initials_per_dim);
    let samples = flow::rate_samples(&model, &cell.graph, &q, &initials, s.h, s.t)?;
    let k = flow::rate_from_kl_samples(&samples, &initials, s.t, RateEstimator::SecondDifference)?.k;
    let k_log = flow::rate_from_kl_samples(&samples, &initials, s.t, RateEstimator::LogRatio)?.k;
    Ok((kappa, k, k_log))
}

pub fn run_cell(cell: &SweepCell, domain: [f64; 2], q: &QSpec, s: &SweepSettings) -> SweepRow {
    let start = Instant::now();
    let result = evaluate_cell(cell, domain, q, s);
    let runtime_ms = start.elapsed().as_millis() as u64;
    let (kappa, k, k_log, error) = match result {
        Ok((a, b, c)) => (Some(a), Some(b), Some(c), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    SweepRow {
        family_index: cell.family_index,
        phi: cell.phi,
        omega: cell.omega,
        theta_domain: domain,
        kappa,
        k,
        k_log,
        error,
        runtime_ms,
    }
}

/// The cells a sweep config expands to.
pub fn plan(config: &SweepConfig) -> Result<Vec<SweepCell>> {
    let [a, b] = config.theta_domain;
    if !(a < b) {
        return Err(Error::Config(format!("theta_domain must satisfy a < b, got [{a}, {b}]")));
    }
    if config.phis == 0 || config.omegas.is_empty() {
        return Err(Error::Config("sweep needs at least one family and one ground metric".into()));
    }
    config.q.resolve(3)?;
    sweep_grid_with(config.phis, &config.omegas)
}

/// Runs every cell; failures are recorded on their rows. Row order follows [`plan`].
pub fn run_sweep(config: &SweepConfig, settings: &SweepSettings, workers: usize) -> Result<Vec<SweepRow>> {
    settings.validate()?;
    let cells = plan(config)?;
    run_cells(&cells, config.theta_domain, &config.q, settings, workers)
}

pub fn run_cells(
    cells: &[SweepCell],
    domain: [f64; 2],
    q: &QSpec,
    settings: &SweepSettings,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            return Ok(pool.install(|| cells.par_iter().map(|c| run_cell(c, domain, q, settings)).collect()));
        }
    }
    let _ = workers;
    Ok(cells.iter().map(|c| run_cell(c, domain, q, settings)).collect())
}
