use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sinkhorn_divergence, CostSpec, EmpiricalMeasure, SinkhornConfig};
use crate::error::{param, Error, Result};
use crate::hamiltonian::ModelSpec;
use crate::sampler::MIN_ESS;
use crate::sampler::{sample_free_field, GaussianReference, LogWeight, PhaseDomain};
use crate::spectral::FourierField;
use crate::stats::{jackknife_sums, Estimate};

/// How E(x | F_n) is formed from an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConditionalEstimator {
    /// Tail coordinates replaced by zero. Exact for centred product measures.
    Projection,
    /// Tail replaced by the mean tail of the k nearest samples in head coordinates.
    NearestNeighbor { k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingBound {
    pub n: usize,
    /// Mean of ‖x − E(x|F_n)‖²_{ℓ²}.
    pub value: Estimate,
    pub estimator: ConditionalEstimator,
    /// n reaches the ensemble's own cutoff; value is zero by construction.
    pub degenerate: bool,
}

impl CouplingBound {
    /// Upper bound on the L² distance between the truncated and full
    /// metric-measure spaces, from the explicit coupling.
    pub fn distance_bound(&self) -> f64 {
        self.value.value.max(0.0).sqrt()
    }
}

fn split_head(u: &FourierField, n: usize) -> (Vec<f64>, Vec<f64>) {
    let lat = u.lattice();
    let mut head = Vec::new();
    let mut tail = Vec::new();
    for (i, c) in u.coeffs().iter().enumerate() {
        let k = lat.mode(i);
        let dst =
            if k[0].unsigned_abs() as usize <= n && k[1].unsigned_abs() as usize <= n { &mut head } else { &mut tail };
        dst.push(c.re);
        dst.push(c.im);
    }
    (head, tail)
}

pub fn truncation_coupling_bound(
    samples: &[FourierField],
    n: usize,
    estimator: ConditionalEstimator,
) -> Result<CouplingBound> {
    let Some(first) = samples.first() else {
        return param("coupling bound needs samples");
    };
    if n == 0 {
        return param("cutoff n must be at least 1");
    }
    let lat = *first.lattice();
    if samples.iter().any(|u| *u.lattice() != lat) {
        return Err(Error::Mismatch("ensemble members live on different lattices".into()));
    }
    if n >= lat.n() {
        return Ok(CouplingBound { n, value: Estimate::new(0.0, 0.0), estimator, degenerate: true });
    }
    let parts: Vec<(Vec<f64>, Vec<f64>)> = samples.par_iter().map(|u| split_head(u, n)).collect();
    let resid: Vec<f64> = match estimator {
        ConditionalEstimator::Projection => parts.iter().map(|(_, t)| t.iter().map(|x| x * x).sum()).collect(),
        ConditionalEstimator::NearestNeighbor { k } => {
            if k == 0 || k >= samples.len() {
                return param("nearest-neighbour regression needs 1 ≤ k < sample count");
            }
            (0..parts.len())
                .into_par_iter()
                .map(|i| {
                    let hi = &parts[i].0;
                    let mut d: Vec<(f64, usize)> = parts
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(j, (h, _))| (hi.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum(), j))
                        .collect();
                    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let ti = &parts[i].1;
                    let mut mean = vec![0.0; ti.len()];
                    for &(_, j) in &d[..k] {
                        for (m, x) in mean.iter_mut().zip(&parts[j].1) {
                            *m += x / k as f64;
                        }
                    }
                    ti.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum()
                })
                .collect()
        }
    };
    Ok(CouplingBound { n, value: Estimate::of_mean(&resid), estimator, degenerate: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub n: usize,
    /// Ent(ν_n | ν).
    pub entropy: Estimate,
    /// Effective sample sizes of the ν_n and ν importance weights.
    pub ess_truncated: f64,
    pub ess_full: f64,
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationEntropyReport {
    pub full_n: usize,
    pub samples: usize,
    pub inside_domain: usize,
    pub rows: Vec<EntropyRow>,
    /// Point estimates strictly decrease along the (sorted) cutoffs.
    pub strictly_decreasing: bool,
    /// No increase exceeds three combined standard errors.
    pub decreasing_within_errors: bool,
}

/// Per-sample U(u) and U(P_n u); None outside the domain.
fn weight_table(
    model: &ModelSpec,
    domain: &PhaseDomain,
    n_list: &[usize],
    u: &FourierField,
) -> Result<Option<(f64, Vec<f64>)>> {
    if !domain.contains(u) {
        return Ok(None);
    }
    let full = LogWeight::Model(model.clone()).eval(u)?;
    let proj =
        n_list.iter().map(|&n| LogWeight::Projected { model: model.clone(), n }.eval(u)).collect::<Result<Vec<_>>>()?;
    Ok(Some((full, proj)))
}

fn ess(lw: &[f64]) -> f64 {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s1, s2) = lw.iter().fold((0.0, 0.0), |(a, b), l| {
        let w = (l - m).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

fn entropy_report(
    full_n: usize,
    total: usize,
    n_list: &[usize],
    table: Vec<(f64, Vec<f64>)>,
) -> Result<TruncationEntropyReport> {
    if table.len() < 2 {
        return Err(Error::Numerical("fewer than two reference draws fell inside the domain".into()));
    }
    let full: Vec<f64> = table.iter().map(|r| r.0).collect();
    let m_full = full.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ess_full = ess(&full);
    let rows: Vec<EntropyRow> = n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let proj: Vec<f64> = table.iter().map(|r| r.1[k]).collect();
            let m_proj = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // Ent = E_{ν_n}[δ] + log E_{ν_n}[e^{−δ}], δ = U(P_n u) − U(u)
            let w1: Vec<f64> = proj.iter().map(|l| (l - m_proj).exp()).collect();
            let w1d: Vec<f64> = w1.iter().zip(proj.iter().zip(&full)).map(|(w, (p, f))| w * (p - f)).collect();
            let w2: Vec<f64> = full.iter().map(|l| (l - m_full).exp()).collect();
            let entropy = jackknife_sums(&[w1, w1d, w2], |s, _| s[1] / s[0] + (s[2] / s[0]).ln() + (m_full - m_proj));
            let ess_truncated = ess(&proj);
            EntropyRow {
                n,
                entropy,
                ess_truncated,
                ess_full,
                reliable: ess_truncated >= MIN_ESS && ess_full >= MIN_ESS,
            }
        })
        .collect();
    let strictly_decreasing = rows.windows(2).all(|w| w[1].entropy.value < w[0].entropy.value);
    let decreasing_within_errors = rows.windows(2).all(|w| {
        let (a, b) = (w[0].entropy, w[1].entropy);
        b.value <= a.value + 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
    });
    Ok(TruncationEntropyReport {
        full_n,
        samples: total,
        inside_domain: table.len(),
        rows,
        strictly_decreasing,
        decreasing_within_errors,
    })
}

fn sorted_cutoffs(n_list: &[usize]) -> Result<Vec<usize>> {
    let mut v = n_list.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.is_empty() || v[0] == 0 {
        return param("cutoff list must be nonempty with n ≥ 1");
    }
    Ok(v)
}

/// Ent(ν_n | ν) from reference draws at the full cutoff. ν and ν_n share
/// the reference and the domain; U is the model's log-weight.
pub fn relative_entropy_from_samples(
    model: &ModelSpec,
    domain: &PhaseDomain,
    samples: &[FourierField],
    n_list: &[usize],
) -> Result<TruncationEntropyReport> {
    model.validate()?;
    let n_list = sorted_cutoffs(n_list)?;
    let full_n = samples.first().map_or(0, |u| u.lattice().n());
    let table: Vec<Option<(f64, Vec<f64>)>> =
        samples.par_iter().map(|u| weight_table(model, domain, &n_list, u)).collect::<Result<_>>()?;
    entropy_report(full_n, samples.len(), &n_list, table.into_iter().flatten().collect())
}

/// Streaming variant: draws `count` reference fields on the fly, so large
/// lattices never hold the whole ensemble in memory.
pub fn relative_entropy_truncation(
    model: &ModelSpec,
    domain: &PhaseDomain,
    reference: &GaussianReference,
    n_list: &[usize],
    count: usize,
    seed: u64,
) -> Result<TruncationEntropyReport> {
    model.validate()?;
    reference.validate()?;
    domain.validate()?;
    let n_list = sorted_cutoffs(n_list)?;
    let table: Vec<Option<(f64, Vec<f64>)>> = (0..count as u64)
        .into_par_iter()
        .map(|i| weight_table(model, domain, &n_list, &sample_free_field(reference, seed, i)))
        .collect::<Result<_>>()?;
    entropy_report(reference.lattice.n(), count, &n_list, table.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportInequalityReport {
    pub alpha: f64,
    /// Debiased entropic estimate of W₂(ω, ν)².
    pub w2_sq: f64,
    /// Raw entropic OT value and the cross plan's transport cost.
    pub raw_entropic: f64,
    pub primal: f64,
    /// Ent(ω | ν).
    pub entropy: Estimate,
    /// (2/α) Ent.
    pub bound: f64,
    /// (2/α) × entropy standard error.
    pub sigma: f64,
    /// w2_sq / bound.
    pub ratio: f64,
    pub ess: f64,
    pub converged: bool,
    pub inconclusive: bool,
    pub pass: bool,
}

/// Checks W₂(ω,ν)² ≤ (2/α) Ent(ω|ν) for ω ∝ e^ℓ ν, with ν given by
/// equally weighted samples and ℓ the log tilt at each sample.
pub fn transport_inequality_check(
    samples: &[FourierField],
    log_tilt: &[f64],
    alpha: f64,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<TransportInequalityReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return param("α must be positive");
    }
    if cost.order != 2.0 {
        return param("the transportation inequality is stated for order 2");
    }
    if samples.len() != log_tilt.len() || samples.len() < 2 {
        return Err(Error::Mismatch("need one log tilt per sample and at least two samples".into()));
    }
    let m = log_tilt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return param("log tilts must be finite");
    }
    let w: Vec<f64> = log_tilt.iter().map(|l| (l - m).exp()).collect();
    let wl: Vec<f64> = w.iter().zip(log_tilt).map(|(a, l)| a * l).collect();
    let entropy = jackknife_sums(&[w, wl], |s, n| s[1] / s[0] - m - (s[0] / n as f64).ln());
    let ess_v = ess(log_tilt);
    let nu = EmpiricalMeasure::uniform(samples.to_vec())?;
    let omega = EmpiricalMeasure::tilted(samples.to_vec(), log_tilt)?;
    let div = sinkhorn_divergence(&omega, &nu, cost, cfg)?;
    let bound = 2.0 / alpha * entropy.value.max(0.0);
    let sigma = 2.0 / alpha * entropy.stderr;
    let w2_sq = div.divergence.max(0.0);
    let inconclusive = ess_v < MIN_ESS || !entropy.value.is_finite() || !div.converged;
    Ok(TransportInequalityReport {
        alpha,
        w2_sq,
        raw_entropic: div.raw,
        primal: div.primal,
        entropy,
        bound,
        sigma,
        ratio: if bound > 0.0 {
            w2_sq / bound
        } else if w2_sq == 0.0 {
            0.0
        } else {
            f64::INFINITY
        },
        ess: ess_v,
        converged: div.converged,
        inconclusive,
        pass: !inconclusive && w2_sq <= bound + 3.0 * sigma,
    })
}

/// 4π / (s (n−1)^{2s}).
pub fn gaussian_tail_bound(n: usize, s: f64) -> Result<f64> {
    if n < 2 || !(s > 0.0) {
        return param("tail bound needs n ≥ 2 and s > 0");
    }
    Ok(4.0 * std::f64::consts::PI / (s * ((n - 1) as f64).powf(2.0 * s)))
}

/// Σ_{m ∈ Z², |m| ≥ n} 2/|m|^{2+2s}: direct sum to radius R plus the
/// continuum remainder 2π/(s R^{2s}).
pub fn lattice_tail_sum(n: usize, s: f64) -> Result<f64> {
    if n < 1 || !(s > 0.0) {
        return param("lattice tail sum needs n ≥ 1 and s > 0");
    }
    let r = (200 * n).max(2000) as i64;
    let (n2, r2) = ((n * n) as i64, r * r);
    let direct: f64 = (-r..=r)
        .into_par_iter()
        .map(|a| {
            let mut acc = 0.0;
            for b in -r..=r {
                let q = a * a + b * b;
                if q >= n2 && q < r2 {
                    acc += 2.0 * (q as f64).powf(-1.0 - s);
                }
            }
            acc
        })
        .sum();
    Ok(direct + 2.0 * std::f64::consts::PI / (s * (r as f64).powf(2.0 * s)))
}
