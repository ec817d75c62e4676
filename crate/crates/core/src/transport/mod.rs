//! Optimal transport between empirical measures on coefficient space.

mod truncation;

pub use truncation::{
    gaussian_tail_bound, lattice_tail_sum, relative_entropy_from_samples, relative_entropy_truncation,
    transport_inequality_check, truncation_coupling_bound, ConditionalEstimator, CouplingBound, EntropyRow,
    TransportInequalityReport, TruncationEntropyReport,
};

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::sampler::SampleEnsemble;
use crate::spectral::{FourierField, Lattice};

/// Largest support the LP oracle accepts.
pub const MAX_EXACT_SUPPORT: usize = 256;

const WEIGHT_TOL: f64 = 1e-12;

/// Weighted point cloud of fields. Points may live on different cutoffs;
/// costs are computed after zero-padding to the largest one.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<FourierField>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<FourierField>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return param("empirical measure needs at least one atom");
        }
        if points.len() != weights.len() {
            return Err(Error::Mismatch(format!("{} points but {} weights", points.len(), weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return param("weights must be finite and nonnegative");
        }
        let total = crate::stats::sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_TOL {
            return param(format!("weights sum to {total}, not 1"));
        }
        let dim = points[0].lattice().dim();
        if points.iter().any(|p| p.lattice().dim() != dim) {
            return Err(Error::Mismatch("atoms live in different dimensions".into()));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<FourierField>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let n = points.len();
        Self::new(points, vec![w; n])
    }

    /// Atoms weighted ∝ exp(log_w), normalized stably.
    pub fn tilted(points: Vec<FourierField>, log_w: &[f64]) -> Result<Self> {
        if points.len() != log_w.len() {
            return Err(Error::Mismatch("one log-weight per atom required".into()));
        }
        let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return param("log-weights must contain a finite maximum");
        }
        let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
        let s = crate::stats::sum(w.iter().copied());
        Self::new(points, w.iter().map(|x| x / s).collect())
    }

    /// Real numbers as zero-mode atoms on the smallest 1D lattice, so that
    /// both ground metrics reduce to |x − y|.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        let lat = Lattice::line(1);
        let pts =
            xs.iter().map(|&x| FourierField::zeros(lat, false, true).with_mode([0, 0], C64::new(x, 0.0))).collect();
        Self::uniform(pts)
    }

    /// Uses the ensemble's importance weights when present.
    pub fn from_ensemble(e: &SampleEnsemble) -> Result<Self> {
        match &e.weights {
            Some(w) => Self::new(e.samples.clone(), w.clone()),
            None => Self::uniform(e.samples.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[FourierField] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn cutoff(&self) -> usize {
        self.points.iter().map(|p| p.lattice().n()).max().unwrap_or(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundMetric {
    /// ℓ² on coefficients.
    L2,
    /// Σ |k|^{−2s}|c_k|², zero mode weighted by 1.
    HMinus { s: f64 },
}

/// cost(x, y) = d(x, y)^order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub order: f64,
    pub metric: GroundMetric,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self { order: 2.0, metric: GroundMetric::L2 }
    }
}

impl CostSpec {
    pub fn h_minus(s: f64) -> Self {
        Self { order: 2.0, metric: GroundMetric::HMinus { s } }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.order >= 1.0 && self.order.is_finite()) {
            return param("Wasserstein order must be at least 1");
        }
        if let GroundMetric::HMinus { s } = self.metric {
            if !(s >= 0.0 && s.is_finite()) {
                return param("H^{-s} metric needs s ≥ 0");
            }
        }
        Ok(())
    }

    fn mode_weight(&self, lat: &Lattice, idx: usize) -> f64 {
        match self.metric {
            GroundMetric::L2 => 1.0,
            GroundMetric::HMinus { s } => {
                if idx == lat.zero_index() {
                    1.0
                } else {
                    lat.k2(idx).powf(-s)
                }
            }
        }
    }

    /// d(x, y) between two fields after zero-padding.
    pub fn distance(&self, x: &FourierField, y: &FourierField) -> Result<f64> {
        let n = x.lattice().n().max(y.lattice().n());
        let lat = x.lattice().with_cutoff(n)?;
        let a = embed(x, &lat, self)?;
        let b = embed(y, &lat, self)?;
        Ok(sq_dist(&a, &b).sqrt())
    }
}

/// Metric-weighted real coordinates on a common lattice.
fn embed(u: &FourierField, lat: &Lattice, cost: &CostSpec) -> Result<Vec<f64>> {
    let v = u.resample(lat)?;
    let mut out = Vec::with_capacity(2 * lat.len());
    for (i, c) in v.coeffs().iter().enumerate() {
        let w = cost.mode_weight(lat, i).sqrt();
        out.push(w * c.re);
        out.push(w * c.im);
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major cost matrix C_ij = d(x_i, y_j)^order.
pub fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cost: &CostSpec) -> Result<Vec<f64>> {
    cost.validate()?;
    if mu.points[0].lattice().dim() != nu.points[0].lattice().dim() {
        return Err(Error::Mismatch("measures live in different dimensions".into()));
    }
    let n = mu.cutoff().max(nu.cutoff());
    let lat = mu.points[0].lattice().with_cutoff(n)?;
    let a: Vec<Vec<f64>> = mu.points.par_iter().map(|p| embed(p, &lat, cost)).collect::<Result<_>>()?;
    let b: Vec<Vec<f64>> = nu.points.par_iter().map(|p| embed(p, &lat, cost)).collect::<Result<_>>()?;
    let half = cost.order / 2.0;
    Ok(a.par_iter()
        .flat_map_iter(|x| {
            b.iter().map(move |y| {
                let d2 = sq_dist(x, y);
                if half == 1.0 {
                    d2
                } else {
                    d2.powf(half)
                }
            })
        })
        .collect())
}

/// Coupling π between two empirical measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major π_ij.
    pub plan: Vec<f64>,
    /// Σ_i |Σ_j π_ij − a_i|.
    pub row_residual: f64,
    /// Σ_j |Σ_i π_ij − b_j|.
    pub col_residual: f64,
    /// Σ π_ij C_ij.
    pub objective: f64,
}

impl TransportPlan {
    fn build(plan: Vec<f64>, a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let (rows, cols) = (a.len(), b.len());
        let mut row_residual = 0.0;
        let mut colsum = vec![0.0; cols];
        for i in 0..rows {
            let r = &plan[i * cols..(i + 1) * cols];
            row_residual += (crate::stats::sum(r.iter().copied()) - a[i]).abs();
            for (s, p) in colsum.iter_mut().zip(r) {
                *s += p;
            }
        }
        let col_residual = colsum.iter().zip(b).map(|(s, w)| (s - w).abs()).sum();
        let objective = crate::stats::sum(plan.iter().zip(c).map(|(p, x)| p * x));
        Self { rows, cols, plan, row_residual, col_residual, objective }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn max_residual(&self) -> f64 {
        self.row_residual.max(self.col_residual)
    }
}

/// Exact W_s by linear programming. Returns (W_s, plan).
pub fn wasserstein_exact(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cost: &CostSpec,
) -> Result<(f64, TransportPlan)> {
    if mu.len() > MAX_EXACT_SUPPORT || nu.len() > MAX_EXACT_SUPPORT {
        return param(format!(
            "supports of {} and {} atoms exceed the exact solver's {MAX_EXACT_SUPPORT}; use sinkhorn",
            mu.len(),
            nu.len()
        ));
    }
    let c = cost_matrix(mu, nu, cost)?;
    let (rows, cols) = (mu.len(), nu.len());
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = c.iter().map(|&x| pb.add_var(x, (0.0, f64::INFINITY))).collect();
    for i in 0..rows {
        let expr: Vec<_> = (0..cols).map(|j| (vars[i * cols + j], 1.0)).collect();
        pb.add_constraint(expr.as_slice(), ComparisonOp::Eq, mu.weights[i]);
    }
    // the last column constraint is implied by the others
    for j in 0..cols.saturating_sub(1) {
        let expr: Vec<_> = (0..rows).map(|i| (vars[i * cols + j], 1.0)).collect();
        pb.add_constraint(expr.as_slice(), ComparisonOp::Eq, nu.weights[j]);
    }
    let sol = pb.solve().map_err(|e| Error::Numerical(format!("transport LP failed: {e}")))?;
    let plan: Vec<f64> = vars.iter().map(|v| sol.var_value(*v).max(0.0)).collect();
    let tp = TransportPlan::build(plan, &mu.weights, &nu.weights, &c);
    Ok((tp.objective.max(0.0).powf(1.0 / cost.order), tp))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Final regularization as a fraction of the largest cost entry.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Target L1 marginal residual.
    pub tol: f64,
    /// ε shrinks by this factor between stages.
    pub scaling: f64,
    /// Over-relaxation of the potential updates, in [1, 2).
    pub relaxation: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 5e-3, max_iter: 50_000, tol: 1e-9, scaling: 0.5, relaxation: 1.8 }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return param("sinkhorn ε must be positive");
        }
        if !(self.scaling > 0.0 && self.scaling < 1.0) {
            return param("ε scaling factor must lie in (0, 1)");
        }
        if !(1.0..2.0).contains(&self.relaxation) {
            return param("relaxation must lie in [1, 2)");
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return param("sinkhorn needs max_iter ≥ 1 and tol > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    /// (Σ π C)^{1/order} for the entropic plan.
    pub value: f64,
    pub plan: TransportPlan,
    /// Entropic objective Σ π C + ε KL(π | a⊗b), via the dual.
    pub entropic: f64,
    /// Absolute final ε.
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn lse(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + it.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sinkhorn_costs(a: &[f64], b: &[f64], c: &[f64], cfg: &SinkhornConfig, order: f64) -> Result<SinkhornResult> {
    cfg.validate()?;
    let (rows, cols) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let cmax = c.iter().copied().fold(0.0, f64::max);
    let scale = if cmax > 0.0 { cmax } else { 1.0 };
    let eps_final = cfg.epsilon * scale;
    let mut f = vec![0.0; rows];
    let mut g = vec![0.0; cols];
    let mut eps = scale.max(eps_final);
    let mut iterations = 0usize;
    let mut residual = f64::INFINITY;
    loop {
        let last = eps <= eps_final;
        let stage_tol = if last { cfg.tol } else { 1e-3 };
        while iterations < cfg.max_iter {
            iterations += 1;
            let om = if last { cfg.relaxation } else { 1.0 };
            f.par_iter_mut().enumerate().for_each(|(i, fi)| {
                let r = &c[i * cols..(i + 1) * cols];
                let new = -eps * lse((0..cols).map(|j| lb[j] + (g[j] - r[j]) / eps));
                *fi += om * (new - *fi);
            });
            g.par_iter_mut().enumerate().for_each(|(j, gj)| {
                let new = -eps * lse((0..rows).map(|i| la[i] + (f[i] - c[i * cols + j]) / eps));
                *gj += om * (new - *gj);
            });
            // with over-relaxation neither marginal is exact, so check both
            let rows_err: f64 = (0..rows)
                .into_par_iter()
                .map(|i| {
                    let r = &c[i * cols..(i + 1) * cols];
                    let s: f64 = (0..cols).map(|j| (la[i] + lb[j] + (f[i] + g[j] - r[j]) / eps).exp()).sum();
                    (s - a[i]).abs()
                })
                .sum();
            let cols_err: f64 = if om == 1.0 {
                0.0
            } else {
                (0..cols)
                    .into_par_iter()
                    .map(|j| {
                        let s: f64 =
                            (0..rows).map(|i| (la[i] + lb[j] + (f[i] + g[j] - c[i * cols + j]) / eps).exp()).sum();
                        (s - b[j]).abs()
                    })
                    .sum()
            };
            residual = rows_err.max(cols_err);
            if !residual.is_finite() {
                return Err(Error::Numerical("sinkhorn potentials diverged".into()));
            }
            if residual < stage_tol {
                break;
            }
        }
        if last || iterations >= cfg.max_iter {
            break;
        }
        eps = (eps * cfg.scaling).max(eps_final);
    }
    let plan: Vec<f64> = (0..rows * cols)
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            (la[i] + lb[j] + (f[i] + g[j] - c[k]) / eps).exp()
        })
        .collect();
    let tp = TransportPlan::build(plan, a, b, c);
    let entropic = crate::stats::sum(a.iter().zip(&f).map(|(w, x)| if *w > 0.0 { w * x } else { 0.0 }))
        + crate::stats::sum(b.iter().zip(&g).map(|(w, x)| if *w > 0.0 { w * x } else { 0.0 }));
    Ok(SinkhornResult {
        value: tp.objective.max(0.0).powf(1.0 / order),
        converged: eps <= eps_final && residual < cfg.tol,
        plan: tp,
        entropic,
        epsilon: eps,
        iterations,
    })
}

/// Log-domain Sinkhorn with ε-scaling. Non-convergence is reported in the
/// result, not raised.
pub fn sinkhorn(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    let c = cost_matrix(mu, nu, cost)?;
    sinkhorn_costs(&mu.weights, &nu.weights, &c, cfg, cost.order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornDivergence {
    /// OT_ε(μ,ν) − ½OT_ε(μ,μ) − ½OT_ε(ν,ν), comparable to W_s^order.
    pub divergence: f64,
    /// Raw OT_ε(μ,ν).
    pub raw: f64,
    /// Σ π C of the cross plan.
    pub primal: f64,
    pub converged: bool,
}

/// Debiased entropic divergence. The ε of the cross problem is reused for
/// the two self terms so the bias cancels.
pub fn sinkhorn_divergence(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<SinkhornDivergence> {
    let cxy = cost_matrix(mu, nu, cost)?;
    let cxx = cost_matrix(mu, mu, cost)?;
    let cyy = cost_matrix(nu, nu, cost)?;
    let cmax = cxy.iter().chain(&cxx).chain(&cyy).copied().fold(0.0, f64::max);
    let rescale = |c: &[f64]| {
        let m = c.iter().copied().fold(0.0, f64::max);
        if m > 0.0 {
            cmax / m
        } else {
            1.0
        }
    };
    let run = |a: &[f64], b: &[f64], c: &[f64]| {
        let local = SinkhornConfig { epsilon: cfg.epsilon * rescale(c), ..*cfg };
        sinkhorn_costs(a, b, c, &local, cost.order)
    };
    let xy = run(&mu.weights, &nu.weights, &cxy)?;
    let xx = run(&mu.weights, &mu.weights, &cxx)?;
    let yy = run(&nu.weights, &nu.weights, &cyy)?;
    Ok(SinkhornDivergence {
        divergence: xy.entropic - 0.5 * (xx.entropic + yy.entropic),
        raw: xy.entropic,
        primal: xy.plan.objective,
        converged: xy.converged && xx.converged && yy.converged,
    })
}
