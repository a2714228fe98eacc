//! JSON run configuration shared by the command-line subcommands.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::SweepSettings;
use crate::expfam::{family_from_angle, ExponentialFamily1D, QSpec, SweepConfig};
use crate::flow::{self, FlowParams, Integrator, RateEstimator};
use crate::geodesic::GeodesicParams;
use crate::ground_metric::{Distribution, Graph, GraphSpec};
use crate::inequalities::InequalityKind;
use crate::manifold::{ParamBox, SimplexChart, StatisticalModel};

/// Which parametrization to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Exponential family on 3 states from an angle on the sum-zero half circle.
    Expfam { phi: f64 },
    /// Exponential family with an explicit unit-norm sufficient statistic.
    ExpfamC { c: Vec<f64> },
    /// The full simplex in the chart `θ = (p_1, …, p_{n-1})`.
    Simplex { n: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Expfam { phi: 0.0 }
    }
}

/// Ground metric: a general 1-based graph or the triangle weights `(ω12, ω23, ω13)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphInput {
    Triangle { omega: [f64; 3] },
    Spec(GraphSpec),
}

impl Default for GraphInput {
    fn default() -> Self {
        GraphInput::Triangle { omega: [1.0 / 3.0; 3] }
    }
}

impl GraphInput {
    pub fn build(&self) -> Result<Graph> {
        match self {
            GraphInput::Triangle { omega } => Graph::triangle(*omega),
            GraphInput::Spec(spec) => spec.build(),
        }
    }
}

/// Parameter box: `[a, b]` for one parameter or explicit bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Interval([f64; 2]),
    Box { theta_min: Vec<f64>, theta_max: Vec<f64> },
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec::Interval([-1.0, 1.0])
    }
}

impl DomainSpec {
    pub fn build(&self) -> Result<ParamBox> {
        match self {
            DomainSpec::Interval([a, b]) => ParamBox::interval(*a, *b),
            DomainSpec::Box { theta_min, theta_max } => ParamBox::new(theta_min.clone(), theta_max.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub h: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub initials_per_dim: usize,
    /// Explicit initial conditions; replaces the grid when present.
    pub initials: Option<Vec<Vec<f64>>>,
    pub estimator: RateEstimator,
    /// Start and horizon for the `flow` subcommand.
    pub theta0: Option<Vec<f64>>,
    pub t_end: f64,
    pub integrator: Integrator,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            h: flow::DEFAULT_H,
            t: flow::DEFAULT_T,
            initials_per_dim: flow::DEFAULT_INITIALS_PER_DIM,
            initials: None,
            estimator: RateEstimator::SecondDifference,
            theta0: None,
            t_end: 1.0,
            integrator: Integrator::Euler,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodesicSection {
    #[serde(flatten)]
    pub params: GeodesicParams,
    pub theta0: Option<Vec<f64>>,
    pub theta1: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InequalitySection {
    pub kinds: Vec<InequalityKind>,
    /// Use this `κ` instead of computing it.
    pub kappa: Option<f64>,
}

impl Default for InequalitySection {
    fn default() -> Self {
        InequalitySection { kinds: InequalityKind::ALL.to_vec(), kappa: None }
    }
}

/// Everything a subcommand needs. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub graph: GraphInput,
    pub q: QSpec,
    pub domain: DomainSpec,
    /// Points per dimension of the curvature and inequality grids.
    pub grid_points: usize,
    pub flow: FlowSection,
    pub geodesic: GeodesicSection,
    pub inequalities: InequalitySection,
    pub sweep: SweepConfig,
    pub out: Option<String>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::default(),
            graph: GraphInput::default(),
            q: QSpec::default(),
            domain: DomainSpec::default(),
            grid_points: crate::curvature::DEFAULT_GRID_POINTS,
            flow: FlowSection::default(),
            geodesic: GeodesicSection::default(),
            inequalities: InequalitySection::default(),
            sweep: SweepConfig::default(),
            out: None,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("config JSON at line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flow.h > 0.0) || !(self.flow.t > 0.0) {
            return Err(Error::Config(format!("need h > 0 and T > 0 (h = {}, T = {})", self.flow.h, self.flow.t)));
        }
        if self.geodesic.params.segments < 2 {
            return Err(Error::Config("geodesic segments must be at least 2".into()));
        }
        if self.grid_points == 0 || self.flow.initials_per_dim == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<StatisticalModel> {
        let domain = self.domain.build()?;
        match &self.model {
            ModelSpec::Expfam { phi } => {
                StatisticalModel::new(Arc::new(family_from_angle(*phi)?), domain)
            }
            ModelSpec::ExpfamC { c } => StatisticalModel::new(Arc::new(ExponentialFamily1D::new(c)?), domain),
            ModelSpec::Simplex { n } => {
                if *n < 2 {
                    return Err(Error::Config("simplex chart needs n >= 2".into()));
                }
                StatisticalModel::new(Arc::new(SimplexChart { n: *n }), domain)
            }
        }
    }

    pub fn build_graph(&self) -> Result<Graph> {
        self.graph.build()
    }

    pub fn build_q(&self, n: usize) -> Result<Distribution> {
        self.q.resolve(n)
    }

    pub fn initials(&self, model: &StatisticalModel) -> Vec<Vec<f64>> {
        self.flow
            .initials
            .clone()
            .unwrap_or_else(|| model.domain().uniform_grid(self.flow.initials_per_dim))
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams { integrator: self.flow.integrator, ..FlowParams::euler(self.flow.h) }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            h: self.flow.h,
            t: self.flow.t,
            initials_per_dim: self.flow.initials_per_dim,
            grid_points: self.grid_points,
        }
    }
}
