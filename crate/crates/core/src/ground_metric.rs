//! Ground metric on the sample space: a weighted undirected graph, the
//! probability-dependent weighted Laplacian `L(p) = Dᵀ Λ(p) D` and its pseudo-inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Smallest probability accepted as "interior".
pub const INTERIOR_TOL: f64 = 1e-12;
/// Tolerance on `Σ p_i = 1`.
pub const SUM_TOL: f64 = 1e-12;
/// Second-smallest Laplacian eigenvalue below which the pseudo-inverse is refused.
pub const SPECTRAL_GAP_TOL: f64 = 1e-12;
/// Above this many states the pseudo-inverse switches to a full eigendecomposition.
pub const DENSE_SOLVE_MAX_N: usize = 64;

/// One undirected edge, stored with `hi > lo` (0-based), which fixes the orientation of `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub hi: usize,
    pub lo: usize,
    pub weight: f64,
}

/// Connected, weighted, undirected graph on `n` states.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    volume: DVector<f64>,
}

impl Graph {
    /// Builds a graph from 0-based `(i, j, ω)` triples. Zero weights mean "no edge" and are dropped.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("graph needs at least 2 nodes, got {n}")));
        }
        let mut kept: Vec<Edge> = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Config(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::Config(format!("self-loop at node {i}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("edge ({i}, {j}) has invalid weight {w}")));
            }
            if w == 0.0 {
                continue;
            }
            let (hi, lo) = if i > j { (i, j) } else { (j, i) };
            if kept.iter().any(|e| e.hi == hi && e.lo == lo) {
                return Err(Error::Config(format!("duplicate edge ({i}, {j})")));
            }
            kept.push(Edge { hi, lo, weight: w });
        }
        if !is_connected(n, &kept) {
            return Err(Error::Disconnected);
        }
        let mut degree = DVector::<f64>::zeros(n);
        for e in &kept {
            degree[e.hi] += e.weight;
            degree[e.lo] += e.weight;
        }
        let total = degree.sum();
        let volume = degree / total;
        Ok(Graph { n, edges: kept, volume })
    }

    /// Three states with weights given in the order `(ω₁₂, ω₂₃, ω₁₃)`.
    pub fn triangle(omega: [f64; 3]) -> Result<Self> {
        Graph::new(3, &[(0, 1, omega[0]), (1, 2, omega[1]), (0, 2, omega[2])])
    }

    pub fn complete(n: usize, weight: f64) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..i {
                edges.push((i, j, weight));
            }
        }
        Graph::new(n, &edges)
    }

    pub fn path(n: usize, weight: f64) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, weight)).collect();
        Graph::new(n, &edges)
    }

    /// Same graph with every weight multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let edges: Vec<_> = self.edges.iter().map(|e| (e.hi, e.lo, e.weight * s)).collect();
        Graph::new(self.n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        self.edges
            .iter()
            .find(|e| e.hi == hi && e.lo == lo)
            .map_or(0.0, |e| e.weight)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: GraphSpec =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("graph JSON: {e}")))?;
        spec.build()
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| (e.hi + 1, e.lo + 1, e.weight))
                .collect(),
        }
    }
}

fn is_connected(n: usize, edges: &[Edge]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for e in edges {
            let other = if e.hi == v {
                e.lo
            } else if e.lo == v {
                e.hi
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// JSON form `{"n": 3, "edges": [[1, 2, 0.5], ...]}` with 1-based node indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        let mut edges = Vec::with_capacity(self.edges.len());
        for &(i, j, w) in &self.edges {
            if i == 0 || j == 0 {
                return Err(Error::Config("graph node indices are 1-based".into()));
            }
            edges.push((i - 1, j - 1, w));
        }
        Graph::new(self.n, &edges)
    }
}

/// Strictly positive probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(DVector<f64>);

impl Distribution {
    pub fn new(p: DVector<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::NotInterior("need at least two states".into()));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotInterior(format!("non-finite entry in {:?}", p.as_slice())));
        }
        let min = p.min();
        if min < INTERIOR_TOL {
            return Err(Error::NotInterior(format!("min p_i = {min:e} < {INTERIOR_TOL:e}")));
        }
        let s = p.sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::NotInterior(format!("Σ p_i = {s} (off by {:e})", s - 1.0)));
        }
        Ok(Distribution(p))
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        Distribution::new(DVector::from_column_slice(p))
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Normalized volume form `d_i = deg(i) / Σ_k deg(k)`.
pub fn volume_form(graph: &Graph) -> DVector<f64> {
    graph.volume.clone()
}

/// Discrete gradient `D ∈ ℝ^{|E|×n}`: the row of edge `(i, j)`, `i > j`, holds
/// `+√ω` at column `i` and `−√ω` at column `j`.
pub fn incidence(graph: &Graph) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(graph.edges.len(), graph.n);
    for (row, e) in graph.edges.iter().enumerate() {
        let s = e.weight.sqrt();
        d[(row, e.hi)] = s;
        d[(row, e.lo)] = -s;
    }
    d
}

fn edge_lambda(graph: &Graph, p: &[f64], e: &Edge) -> f64 {
    0.5 * (p[e.hi] / graph.volume[e.hi] + p[e.lo] / graph.volume[e.lo])
}

/// Diagonal `Λ(p)` with entries `½(p_i/d_i + p_j/d_j)`, one per edge.
pub fn lambda_weights(graph: &Graph, p: &Distribution) -> DMatrix<f64> {
    let diag: Vec<f64> = graph
        .edges
        .iter()
        .map(|e| edge_lambda(graph, p.as_slice(), e))
        .collect();
    DMatrix::from_diagonal(&DVector::from_vec(diag))
}

/// Weighted Laplacian `L(p) = Dᵀ Λ(p) D`, assembled edge by edge.
pub fn laplacian(graph: &Graph, p: &Distribution) -> DMatrix<f64> {
    laplacian_raw(graph, p.as_slice())
}

/// Same as [`laplacian`] for any vector `p` (the map is linear in `p`).
pub fn laplacian_raw(graph: &Graph, p: &[f64]) -> DMatrix<f64> {
    let n = graph.n;
    let mut l = DMatrix::zeros(n, n);
    for e in &graph.edges {
        let w = e.weight * edge_lambda(graph, p, e);
        l[(e.hi, e.hi)] += w;
        l[(e.lo, e.lo)] += w;
        l[(e.hi, e.lo)] -= w;
        l[(e.lo, e.hi)] -= w;
    }
    l
}

/// Moore–Penrose pseudo-inverse of `L(p)`.
///
/// For `n ≤ 64` this uses `L† = (L + 11ᵀ/n)⁻¹ − 11ᵀ/n`, which is exact because the kernel
/// of `L(p)` is spanned by the constants; larger graphs go through an eigendecomposition.
pub fn laplacian_pinv(graph: &Graph, p: &Distribution) -> Result<DMatrix<f64>> {
    let l = laplacian(graph, p);
    if graph.n > DENSE_SOLVE_MAX_N {
        spectral_pinv(&l)
    } else {
        shifted_pinv(&l)
    }
}

fn shifted_pinv(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let proj = DMatrix::from_element(n, n, 1.0 / n as f64);
    let shifted = l + &proj;
    let inv = match shifted.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => return Err(gap_error(&linalg::sym_eigenvalues(l))),
    };
    // λ_min(L + P) ≥ 1 / trace((L + P)⁻¹); only pay for an eigensolve when that bound is small.
    if 1.0 / inv.trace() < 1e3 * SPECTRAL_GAP_TOL {
        let ev = linalg::sym_eigenvalues(l);
        if ev[1] < SPECTRAL_GAP_TOL {
            return Err(gap_error(&ev));
        }
    }
    Ok(linalg::symmetrize(&(inv - proj)))
}

/// Pseudo-inverse from the eigendecomposition, dropping the single kernel direction.
pub fn spectral_pinv(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = linalg::sym_eigen(l);
    if vals[1] < SPECTRAL_GAP_TOL {
        return Err(gap_error(&vals));
    }
    let n = l.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &val) in vals.iter().enumerate().skip(1) {
        let v = vecs.column(k);
        out += (v * v.transpose()) / val;
    }
    Ok(linalg::symmetrize(&out))
}

fn gap_error(ev: &[f64]) -> Error {
    Error::Degenerate(format!(
        "second-smallest Laplacian eigenvalue {:e} below {SPECTRAL_GAP_TOL:e}",
        ev.get(1).copied().unwrap_or(f64::NAN)
    ))
}
