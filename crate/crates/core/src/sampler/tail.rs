use serde::{Deserialize, Serialize};

use super::GaussianReference;
use crate::error::{param, Result};
use crate::spectral::{FourierField, Lattice};
use crate::stats::{linear_fit, Estimate, LinearFit};

/// Empirical frequency with binomial standard error.
pub fn frequency(hits: usize, total: usize) -> Estimate {
    if total == 0 {
        return Estimate::new(0.0, 0.0);
    }
    let p = hits as f64 / total as f64;
    Estimate::new(p, (p * (1.0 - p) / total as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub kappa: f64,
    pub tail: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub s: f64,
    pub rows: Vec<TailRow>,
    /// log(tail) against κ², over rows with nonzero tail.
    pub fit: Option<LinearFit>,
    /// Every sample already lies inside the smallest κ ball, or too few
    /// nonzero rows to fit.
    pub degenerate: bool,
}

/// Fraction of samples with ‖u‖_{Ḣ^s} > κ for each κ, and the log-linear fit.
pub fn tail_mass_estimate(samples: &[FourierField], s: f64, kappas: &[f64]) -> Result<TailReport> {
    if !(s > 0.25 && s < 0.5) {
        return param("tail estimate needs 1/4 < s < 1/2");
    }
    let norms: Vec<f64> = samples.iter().map(|u| u.sobolev_sq(s, false).sqrt()).collect();
    let rows: Vec<TailRow> = kappas
        .iter()
        .map(|&kappa| TailRow { kappa, tail: frequency(norms.iter().filter(|&&x| x > kappa).count(), norms.len()) })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.tail.value > 0.0).map(|r| (r.kappa * r.kappa, r.tail.value.ln())).unzip();
    let smallest_empty = rows.iter().min_by(|a, b| a.kappa.total_cmp(&b.kappa)).is_some_and(|r| r.tail.value == 0.0);
    let fit = (x.len() >= 3).then(|| linear_fit(&x, &y));
    Ok(TailReport { s, rows, degenerate: smallest_empty || fit.is_none(), fit })
}

/// Reference for the decay-domain bound: û(j) = γ_j/|j| with standard complex
/// γ_j, E|γ_j|² = 1, i.e. E|c_j|² = 1/|j|².
pub fn decay_reference(lattice: Lattice) -> GaussianReference {
    GaussianReference { lattice, rho: 0.0, stiffness: 2.0, real: false }
}

/// exp(−2(6+π)e^{−K₂²/2}/(K₂√(2π))) − exp(−K₁²/4 + π/(2s) + 5).
pub fn decay_mass_bound(k1: f64, k2: f64, s: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let first = (-2.0 * (6.0 + pi) * (-0.5 * k2 * k2).exp() / (k2 * (2.0 * pi).sqrt())).exp();
    first - (-0.25 * k1 * k1 + pi / (2.0 * s) + 5.0).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayMassReport {
    pub k1: f64,
    pub k2: f64,
    pub s: f64,
    pub eps: f64,
    pub empirical: Estimate,
    pub bound: f64,
    /// Bound ≤ 0 carries no information.
    pub vacuous: bool,
    /// K₂ > 5, which also gives K₂e^{K₂²/2} > 4. Below that the
    /// Euler–Maclaurin constant in the bound is not justified.
    pub hypothesis_holds: bool,
}

impl DecayMassReport {
    /// Empirical mass is not below the bound by more than 3 standard errors.
    pub fn consistent(&self) -> bool {
        self.vacuous || self.empirical.value + 3.0 * self.empirical.stderr >= self.bound
    }
}

/// Empirical mass of {‖u‖_{H^{-s}} ≤ K₁, |û(j)| ≤ K₂|j|^{−3/4−ε}} and the closed-form lower bound.
pub fn decay_domain_mass(k1: f64, k2: f64, s: f64, eps: f64, samples: &[FourierField]) -> Result<DecayMassReport> {
    let dom = super::PhaseDomain::Decay { k1, k2, s, eps };
    dom.validate()?;
    let hits = samples.iter().filter(|u| dom.contains(u)).count();
    let bound = decay_mass_bound(k1, k2, s);
    Ok(DecayMassReport {
        k1,
        k2,
        s,
        eps,
        empirical: frequency(hits, samples.len()),
        bound,
        vacuous: bound <= 0.0,
        hypothesis_holds: k2 > 5.0 && k2 * (0.5 * k2 * k2).exp() > 4.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SampleEnsemble;

    #[test]
    fn bound_limits() {
        assert!(decay_mass_bound(1.0, 3.0, 0.2) < 0.0);
        let far = decay_mass_bound(200.0, 40.0, 0.2);
        assert!((far - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tail_vanishes_for_large_kappa() {
        let r = GaussianReference::loop_measure(Lattice::line(16), 0.0);
        let ens = SampleEnsemble::from_reference(r, 2000, 4);
        let rep = tail_mass_estimate(&ens.samples, 0.3, &[0.5, 1.0, 2.0, 3.0, 1e3]).unwrap();
        assert_eq!(rep.rows.last().unwrap().tail.value, 0.0);
        assert!(rep.rows.windows(2).all(|w| w[1].tail.value <= w[0].tail.value));
        assert!(tail_mass_estimate(&ens.samples, 0.6, &[1.0]).is_err());
        let deg = tail_mass_estimate(&ens.samples, 0.3, &[1e3, 2e3]).unwrap();
        assert!(deg.degenerate);
    }

    #[test]
    fn decay_reference_variance() {
        let r = decay_reference(Lattice::square(3));
        let i = r.lattice.index([1, 1]).unwrap();
        assert!((r.variance(i) - 0.5).abs() < 1e-15);
    }
}
