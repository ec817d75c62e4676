use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_free_field, GaussianReference, LogWeight, PhaseDomain, Target};
use crate::error::{param, Result};
use crate::hamiltonian::{gradient, kinetic, power_integral, ModelSpec};
use crate::spectral::{FourierField, Lattice};
use crate::stats::log_sum_exp;

/// Importance-sampling estimate of Z = E_μ[1_Ω e^Φ].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    pub z: f64,
    pub stderr: f64,
    pub log_z: f64,
    /// (Σw)²/Σw².
    pub ess: f64,
    pub reliable: bool,
    /// Largest log-weight seen among the samples inside the domain.
    pub max_log_weight: f64,
}

pub const MIN_ESS: f64 = 30.0;

/// Z from log-weights (−∞ marks samples outside the domain).
pub fn partition_from_log_weights(lw: &[f64]) -> PartitionEstimate {
    let m = lw.len() as f64;
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lw.is_empty() || max == f64::NEG_INFINITY {
        return PartitionEstimate {
            z: 0.0,
            stderr: 0.0,
            log_z: f64::NEG_INFINITY,
            ess: 0.0,
            reliable: false,
            max_log_weight: f64::NEG_INFINITY,
        };
    }
    let log_sum = log_sum_exp(lw);
    let log_z = log_sum - m.ln();
    let z = log_z.exp();
    // second moment relative to the max for stability
    let scaled: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let s1: f64 = crate::stats::sum(scaled.iter().copied());
    let s2: f64 = crate::stats::sum(scaled.iter().map(|w| w * w));
    let ess = s1 * s1 / s2;
    let mean = s1 / m;
    let var = if lw.len() > 1 { (s2 - m * mean * mean).max(0.0) / (m - 1.0) } else { 0.0 };
    let stderr = max.exp() * (var / m).sqrt();
    PartitionEstimate { z, stderr, log_z, ess, reliable: ess >= MIN_ESS, max_log_weight: max }
}

/// Log importance weight of one reference draw: Φ on the domain, −∞ outside.
pub fn log_importance_weight(target: &Target, u: &FourierField) -> Result<f64> {
    if !target.domain.contains(u) {
        return Ok(f64::NEG_INFINITY);
    }
    if target.weight.is_zero() {
        Ok(0.0)
    } else {
        target.weight.eval(u)
    }
}

/// Z for a target from samples of its Gaussian reference.
pub fn partition_estimate(target: &Target, samples: &[FourierField]) -> Result<PartitionEstimate> {
    let lw: Vec<f64> = samples.par_iter().map(|u| log_importance_weight(target, u)).collect::<Result<_>>()?;
    Ok(partition_from_log_weights(&lw))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizability {
    Stable,
    Marginal,
    Divergent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub n: usize,
    /// sup of λ/p∫|u|^p − ½∫|u'|² over the truncated mass ball.
    pub log_max_weight: f64,
    pub partition: PartitionEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizabilityReport {
    pub p: u32,
    pub lambda: f64,
    pub mass: f64,
    pub rows: Vec<ProbeRow>,
    pub class: Normalizability,
}

impl NormalizabilityReport {
    /// Every pair of Z estimates agrees within 3 combined standard errors.
    pub fn partitions_consistent(&self) -> bool {
        self.rows.iter().all(|a| {
            self.rows.iter().all(|b| {
                let (x, y) = (a.partition, b.partition);
                (x.z - y.z).abs() <= 3.0 * (x.stderr.powi(2) + y.stderr.powi(2)).sqrt() + 1e-12 * x.z.abs()
            })
        })
    }

    pub fn log_max_strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].log_max_weight > w[0].log_max_weight)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub samples: usize,
    pub seed: u64,
    /// Projected-gradient iterations in the ground-state search.
    pub ascent_steps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { samples: 4000, seed: 1, ascent_steps: 200 }
    }
}

/// Mean-zero Gaussian bump of width w scaled to mass m on a 1D lattice.
fn bump(lat: Lattice, w: f64, m: f64) -> FourierField {
    let f = FourierField::from_fn(lat, false, false, |k| C64::new((-0.5 * (k[0] as f64 * w).powi(2)).exp(), 0.0));
    let mass = f.mass();
    if mass == 0.0 {
        f
    } else {
        f.scale((m / mass).sqrt())
    }
}

fn objective(p: u32, lambda: f64, u: &FourierField) -> f64 {
    lambda / p as f64 * power_integral(u, p) - kinetic(u)
}

fn project_ball(u: FourierField, n: f64) -> FourierField {
    let m = u.mass();
    if m > n {
        u.scale((n / m).sqrt())
    } else {
        u
    }
}

/// sup over mean-zero P_n L² ∩ {∫|u|² ≤ N} of λ/p∫|u|^p − ½∫|u'|².
///
/// Bump scan over widths and masses, then projected gradient ascent from the
/// best bump. The zero field (value 0) is always a candidate.
pub fn max_log_weight(p: u32, lambda: f64, mass: f64, n: usize, ascent_steps: usize) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let lat = Lattice::new(1, n, 2)?;
    let mut best = FourierField::zeros(lat, false, false);
    let mut best_val = 0.0;
    let widths: Vec<f64> = (0..40).map(|i| 0.05 / n as f64 * (4000f64).powf(i as f64 / 39.0)).collect();
    for &w in &widths {
        for t in [0.25, 0.5, 1.0] {
            let u = bump(lat, w, t * mass);
            let v = objective(p, lambda, &u);
            if v > best_val {
                best_val = v;
                best = u;
            }
        }
    }
    // −∇H for H = ½∫|u'|² − λ/p∫|u|^p
    let model = ModelSpec::Nls { p, lambda, dim: 1, mass_penalty: 0.0 };
    let mut eta = 0.5 / (n * n) as f64;
    let mut u = best;
    let mut val = best_val;
    if val > 0.0 {
        for _ in 0..ascent_steps {
            let g = gradient(&model, &u)?;
            let cand = project_ball(u.axpy(-eta, &g), mass);
            let cv = objective(p, lambda, &cand);
            if cv > val {
                u = cand;
                val = cv;
                eta *= 1.2;
            } else {
                eta *= 0.5;
                if eta < 1e-14 {
                    break;
                }
            }
        }
    }
    Ok(val.max(0.0))
}

/// Gibbs density e^{λ/p∫|P_n u|^p} on the mass ball across truncations, with
/// common reference draws at the largest n.
pub fn normalizability_probe(
    p: u32,
    lambda: f64,
    mass: f64,
    n_list: &[usize],
    config: &ProbeConfig,
) -> Result<NormalizabilityReport> {
    if p < 2 || p % 2 == 1 {
        return param(format!("probe needs an even exponent p ≥ 2, got {p}"));
    }
    if n_list.is_empty() || mass <= 0.0 {
        return param("probe needs cutoffs and a positive mass");
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    let n_ref = *ns.last().unwrap();
    let reference = GaussianReference::loop_measure(Lattice::new(1, n_ref, 2)?, 0.0);
    let samples: Vec<FourierField> =
        (0..config.samples as u64).into_par_iter().map(|i| sample_free_field(&reference, config.seed, i)).collect();
    let domain = PhaseDomain::MassBall { n: mass };
    let inside: Vec<bool> = samples.iter().map(|u| domain.contains(u)).collect();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in &ns {
        let sub = reference.lattice.with_cutoff(n)?;
        let lw: Vec<f64> = samples
            .par_iter()
            .zip(&inside)
            .map(|(u, &ok)| -> Result<f64> {
                if !ok {
                    return Ok(f64::NEG_INFINITY);
                }
                if lambda == 0.0 {
                    return Ok(0.0);
                }
                let w = LogWeight::Power { p, lambda };
                w.eval(&u.resample(&sub)?)
            })
            .collect::<Result<_>>()?;
        rows.push(ProbeRow {
            n,
            log_max_weight: max_log_weight(p, lambda, mass, n, config.ascent_steps)?,
            partition: partition_from_log_weights(&lw),
        });
    }
    let mut report = NormalizabilityReport { p, lambda, mass, rows, class: Normalizability::Marginal };
    let first = report.rows[0].log_max_weight;
    let last = report.rows.last().unwrap().log_max_weight;
    let growth = last - first;
    report.class = if report.rows.len() > 1 && report.log_max_strictly_increasing() && growth > 0.5 {
        Normalizability::Divergent
    } else if growth.abs() < 0.05 * (1.0 + first.abs()) && report.partitions_consistent() {
        Normalizability::Stable
    } else {
        Normalizability::Marginal
    };
    Ok(report)
}

/// Operational critical mass: the largest N whose probe is stable at the
/// largest cutoff, by bracketing and geometric bisection. An estimator only.
pub fn estimate_n0(p: u32, lambda: f64, n_list: &[usize], config: &ProbeConfig, iters: usize) -> Result<f64> {
    let stable = |m: f64| -> Result<bool> {
        Ok(normalizability_probe(p, lambda, m, n_list, config)?.class == Normalizability::Stable)
    };
    let (mut lo, mut hi) = (1.0, 1.0);
    if stable(1.0)? {
        for _ in 0..60 {
            hi *= 2.0;
            if !stable(hi)? {
                break;
            }
            lo = hi;
        }
        if lo == hi {
            return Ok(f64::INFINITY);
        }
    } else {
        for _ in 0..60 {
            lo /= 2.0;
            if stable(lo)? {
                break;
            }
            hi = lo;
        }
        if lo == hi {
            return Ok(0.0);
        }
    }
    for _ in 0..iters {
        let mid = (lo * hi).sqrt();
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SampleEnsemble;

    #[test]
    fn free_unrestricted_z_is_one() {
        let r = GaussianReference::loop_measure(Lattice::line(8), 0.0);
        let ens = SampleEnsemble::from_reference(r, 200, 1);
        let t = Target::new(r, LogWeight::Model(ModelSpec::nls(4, 0.0)), PhaseDomain::Unrestricted).unwrap();
        let z = partition_estimate(&t, &ens.samples).unwrap();
        assert_eq!(z.z, 1.0);
        assert_eq!(z.stderr, 0.0);
        assert!(z.reliable);
    }

    #[test]
    fn free_mass_ball_is_frequency() {
        let r = GaussianReference::loop_measure(Lattice::line(8), 0.0);
        let ens = SampleEnsemble::from_reference(r, 4000, 2);
        let dom = PhaseDomain::MassBall { n: 2.0 };
        let t = Target::new(r, LogWeight::Zero, dom.clone()).unwrap();
        let z = partition_estimate(&t, &ens.samples).unwrap();
        let freq = ens.samples.iter().filter(|u| dom.contains(u)).count() as f64 / 4000.0;
        assert!((z.z - freq).abs() < 1e-12);
        assert!((z.stderr - (freq * (1.0 - freq) / 3999.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn degenerate_weights_flagged() {
        let z = partition_from_log_weights(&[0.0, 50.0, 1.0, 2.0]);
        assert!(!z.reliable);
        assert!(z.ess < 1.01);
        let none = partition_from_log_weights(&[f64::NEG_INFINITY; 3]);
        assert_eq!(none.z, 0.0);
    }

    #[test]
    fn ground_state_scaling() {
        // p = 8 grows without bound with n; p = 4 at small λN stays at zero
        let a = max_log_weight(8, 1.0, 2.0, 8, 50).unwrap();
        let b = max_log_weight(8, 1.0, 2.0, 16, 50).unwrap();
        assert!(b > a && a > 0.0, "{a} {b}");
        assert_eq!(max_log_weight(4, 1e-3, 8.0, 32, 50).unwrap(), 0.0);
    }

    #[test]
    fn free_probe_is_stable() {
        let cfg = ProbeConfig { samples: 500, seed: 3, ascent_steps: 10 };
        let r = normalizability_probe(4, 0.0, 3.0, &[4, 8], &cfg).unwrap();
        assert_eq!(r.class, Normalizability::Stable);
        assert_eq!(r.rows[0].partition.z, r.rows[1].partition.z);
    }
}
