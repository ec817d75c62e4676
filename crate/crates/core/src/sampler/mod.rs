//! Gaussian reference measures, phase domains and Metropolis sampling of
//! Gibbs densities relative to them.

mod partition;
mod pcn;
mod tail;

pub use partition::*;
pub use pcn::*;
pub use tail::*;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::hamiltonian::{interaction, power_integral, ModelSpec};
use crate::spectral::{FourierField, Lattice};

/// Centered Gaussian with precision ρ + a|k|² per mode.
///
/// Complex fields: real and imaginary parts independent with variance
/// 1/(ρ + a|k|²), so E|c_k|² = 2/(ρ + a|k|²). Real fields: E|c_k|² = 1/(ρ + a|k|²)
/// with c_{−k} = conj c_k, i.e. density ∝ exp(−½ Σ_k (ρ + a|k|²)|c_k|²).
/// The zero mode is carried only when ρ > 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianReference {
    pub lattice: Lattice,
    pub rho: f64,
    /// Coefficient a on |k|²: 1 for the loop, 0 for white noise.
    pub stiffness: f64,
    pub real: bool,
}

impl GaussianReference {
    /// Brownian loop / free field, E|c_k|² = 2/(ρ + |k|²).
    pub fn loop_measure(lattice: Lattice, rho: f64) -> Self {
        Self { lattice, rho, stiffness: 1.0, real: false }
    }

    /// Real mean-zero loop, E|c_j|² = 1/j².
    pub fn real_loop(lattice: Lattice) -> Self {
        Self { lattice, rho: 0.0, stiffness: 1.0, real: true }
    }

    /// Real white noise, E|c_k|² = 1 for k ≠ 0, mean zero.
    pub fn white_noise(lattice: Lattice) -> Self {
        Self { lattice, rho: 0.0, stiffness: 0.0, real: true }
    }

    /// The natural reference for a model at cutoff n.
    pub fn for_model(model: &ModelSpec, n: usize) -> Result<Self> {
        let lat = Lattice::new(model.dim(), n, 2)?;
        Ok(match model {
            ModelSpec::Kdv { .. } => Self::real_loop(lat),
            ModelSpec::Gp { rho, .. } => Self::loop_measure(lat, *rho),
            _ => Self::loop_measure(lat, 0.0),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho < 0.0 || self.stiffness < 0.0 {
            return param("reference needs ρ, a ≥ 0");
        }
        if self.rho == 0.0 && self.stiffness == 0.0 && !self.real {
            return param("complex white noise is not supported");
        }
        Ok(())
    }

    pub fn has_zero_mode(&self) -> bool {
        self.rho > 0.0
    }

    /// E|c_k|² for lattice index `idx` (0 for an absent zero mode).
    pub fn variance(&self, idx: usize) -> f64 {
        if idx == self.lattice.zero_index() && !self.has_zero_mode() {
            return 0.0;
        }
        let q = self.rho + self.stiffness * self.lattice.k2(idx);
        if q == 0.0 {
            // white noise without mass: unit variance off the zero mode
            return if idx == self.lattice.zero_index() { 0.0 } else { 1.0 };
        }
        if self.real {
            1.0 / q
        } else {
            2.0 / q
        }
    }

    /// Σ_k E|c_k|² = E∫|u|².
    pub fn expected_mass(&self) -> f64 {
        crate::stats::sum((0..self.lattice.len()).map(|i| self.variance(i)))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> FourierField {
        let lat = self.lattice;
        let z = lat.zero_index();
        let mut f = FourierField::zeros(lat, self.real, self.has_zero_mode());
        let mut g = || -> f64 { rng.sample(StandardNormal) };
        if self.real {
            for i in 0..z {
                let sd = (self.variance(i) / 2.0).sqrt();
                let c = C64::new(g() * sd, g() * sd);
                f.coeffs[i] = c;
                f.coeffs[lat.neg(i)] = c.conj();
            }
            if self.has_zero_mode() {
                f.coeffs[z] = C64::new(g() * self.variance(z).sqrt(), 0.0);
            }
        } else {
            for i in 0..lat.len() {
                let sd = (self.variance(i) / 2.0).sqrt();
                let (a, b) = (g(), g());
                if i != z || self.has_zero_mode() {
                    f.coeffs[i] = C64::new(a * sd, b * sd);
                }
            }
        }
        f
    }
}

/// Draw one field deterministically from (seed, stream).
pub fn sample_free_field(reference: &GaussianReference, seed: u64, stream: u64) -> FourierField {
    let mut rng = chain_rng(seed, stream);
    reference.sample(&mut rng)
}

pub(crate) fn chain_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Restriction set for the Gibbs measure; membership is exact in coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseDomain {
    Unrestricted,
    /// Σ|c_k|² ≤ N.
    MassBall {
        n: f64,
    },
    /// Σ|c_k|² ≤ N and (Σ_{k≠0} |k|^{2s}|c_k|²)^{1/2} ≤ κ, 1/4 < s < 1/2.
    MassAndSobolev {
        n: f64,
        kappa: f64,
        s: f64,
    },
    /// ‖u‖_{H^{-s}} ≤ K₁ and |c_j| ≤ K₂|j|^{−3/4−ε} for j ≠ 0.
    Decay {
        k1: f64,
        k2: f64,
        s: f64,
        eps: f64,
    },
    /// Intersection of the listed domains.
    Product(Vec<PhaseDomain>),
}

impl PhaseDomain {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Unrestricted => Ok(()),
            Self::MassBall { n } => {
                if *n > 0.0 {
                    Ok(())
                } else {
                    param("mass radius must be positive")
                }
            }
            Self::MassAndSobolev { n, kappa, s } => {
                if *n <= 0.0 || *kappa <= 0.0 {
                    param("radii must be positive")
                } else if !(*s > 0.25 && *s < 0.5) {
                    param("Sobolev index must satisfy 1/4 < s < 1/2")
                } else {
                    Ok(())
                }
            }
            Self::Decay { k1, k2, s, eps } => {
                if *k1 <= 0.0 || *k2 <= 0.0 {
                    param("radii must be positive")
                } else if !(*s > 0.0 && *s < 0.25) {
                    param("decay domain needs 0 < s < 1/4")
                } else if !(*eps > 0.0 && *eps < 0.125) {
                    param("decay domain needs 0 < ε < 1/8")
                } else {
                    Ok(())
                }
            }
            Self::Product(list) => list.iter().try_for_each(|d| d.validate()),
        }
    }

    pub fn contains(&self, u: &FourierField) -> bool {
        match self {
            Self::Unrestricted => true,
            Self::MassBall { n } => u.mass() <= *n,
            Self::MassAndSobolev { n, kappa, s } => u.mass() <= *n && u.sobolev_sq(*s, false) <= kappa * kappa,
            Self::Decay { k1, k2, s, eps } => {
                if u.sobolev_sq(-*s, false) > k1 * k1 {
                    return false;
                }
                let lat = u.lattice();
                let z = lat.zero_index();
                u.coeffs()
                    .iter()
                    .enumerate()
                    .all(|(i, c)| i == z || c.norm() <= k2 * lat.k2(i).sqrt().powf(-0.75 - eps))
            }
            Self::Product(list) => list.iter().all(|d| d.contains(u)),
        }
    }

    /// Mass radius if the domain bounds the mass.
    pub fn mass_bound(&self) -> Option<f64> {
        match self {
            Self::MassBall { n } | Self::MassAndSobolev { n, .. } => Some(*n),
            Self::Product(list) => list.iter().filter_map(|d| d.mass_bound()).reduce(f64::min),
            _ => None,
        }
    }
}

pub fn domain_contains(domain: &PhaseDomain, u: &FourierField) -> bool {
    domain.contains(u)
}

/// Log-density Φ of the Gibbs measure relative to its Gaussian reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogWeight {
    Zero,
    /// Φ = −(H − kinetic): the model's interaction with the sign flipped.
    Model(ModelSpec),
    /// Φ(P_n u): the model's weight evaluated on the truncation to cutoff n.
    Projected {
        model: ModelSpec,
        n: usize,
    },
    /// Φ = λ/p ∫|u|^p for any even p, bypassing the NLS exponent range.
    Power {
        p: u32,
        lambda: f64,
    },
}

impl LogWeight {
    pub fn eval(&self, u: &FourierField) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Model(m) => Ok(-interaction(m, u)?),
            Self::Projected { model, n } => {
                let lat = u.lattice().with_cutoff(*n)?;
                Ok(-interaction(model, &u.resample(&lat)?)?)
            }
            Self::Power { p, lambda } => {
                if *lambda == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(lambda / *p as f64 * power_integral(u, *p))
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Model(m) | Self::Projected { model: m, .. } => match m {
                ModelSpec::Nls { lambda, mass_penalty, .. } => *lambda == 0.0 && *mass_penalty == 0.0,
                ModelSpec::Kdv { lambda } => *lambda == 0.0,
                ModelSpec::Gp { lambda, .. } => *lambda == 0.0,
                ModelSpec::Zakharov { .. } => false,
            },
            Self::Power { lambda, .. } => *lambda == 0.0,
        }
    }
}

/// Gibbs target: reference × e^Φ × domain indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub reference: GaussianReference,
    pub weight: LogWeight,
    pub domain: PhaseDomain,
}

impl Target {
    pub fn new(reference: GaussianReference, weight: LogWeight, domain: PhaseDomain) -> Result<Self> {
        reference.validate()?;
        domain.validate()?;
        Ok(Self { reference, weight, domain })
    }

    /// The Gibbs measure of a model at cutoff n on the given domain.
    pub fn for_model(model: &ModelSpec, n: usize, domain: PhaseDomain) -> Result<Self> {
        model.validate()?;
        Self::new(GaussianReference::for_model(model, n)?, LogWeight::Model(model.clone()), domain)
    }
}

/// Samples with provenance; all members satisfy the domain predicate.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEnsemble {
    pub samples: Vec<FourierField>,
    pub target: Target,
    pub seed: u64,
    pub thin: usize,
    /// Optional per-sample importance weights (normalized to sum 1).
    pub weights: Option<Vec<f64>>,
}

impl SampleEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn lattice(&self) -> Lattice {
        self.target.reference.lattice
    }

    /// Independent reference draws, streams 0..count of `seed`.
    pub fn from_reference(reference: GaussianReference, count: usize, seed: u64) -> Self {
        use rayon::prelude::*;
        let samples = (0..count as u64).into_par_iter().map(|i| sample_free_field(&reference, seed, i)).collect();
        Self {
            samples,
            target: Target { reference, weight: LogWeight::Zero, domain: PhaseDomain::Unrestricted },
            seed,
            thin: 1,
            weights: None,
        }
    }

    /// Reference draws conditioned on the domain by rejection.
    pub fn rejection(reference: GaussianReference, domain: PhaseDomain, count: usize, seed: u64) -> Result<Self> {
        let mut rng = chain_rng(seed, 0);
        let mut samples = Vec::with_capacity(count);
        let mut tries = 0usize;
        while samples.len() < count {
            let u = reference.sample(&mut rng);
            tries += 1;
            if domain.contains(&u) {
                samples.push(u);
            }
            if tries > 1000 * count.max(100) && samples.len() * 1000 < tries {
                return Err(Error::Numerical("domain has reference mass below 1e-3".into()));
            }
        }
        Ok(Self {
            samples,
            target: Target { reference, weight: LogWeight::Zero, domain },
            seed,
            thin: 1,
            weights: None,
        })
    }

    /// Evaluate a scalar observable on each sample.
    pub fn map(&self, f: impl Fn(&FourierField) -> f64 + Sync + Send) -> Vec<f64> {
        use rayon::prelude::*;
        self.samples.par_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Estimate;

    #[test]
    fn massive_zero_mode_variance() {
        let r = GaussianReference::loop_measure(Lattice::square(2), 1.0);
        let z = r.lattice.zero_index();
        let xs: Vec<f64> = (0..100_000u64).map(|i| sample_free_field(&r, 5, i).coeffs()[z].norm_sqr()).collect();
        let e = Estimate::of_mean(&xs);
        assert!((e.value - 2.0).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn massless_loop_is_mean_zero_and_deterministic() {
        let r = GaussianReference::loop_measure(Lattice::line(8), 0.0);
        let a = sample_free_field(&r, 11, 3);
        assert_eq!(a.get([0, 0]), C64::new(0.0, 0.0));
        assert_eq!(a, sample_free_field(&r, 11, 3));
        assert_ne!(a, sample_free_field(&r, 11, 4));
    }

    #[test]
    fn variances_per_mode() {
        for r in [
            GaussianReference::loop_measure(Lattice::line(4), 0.0),
            GaussianReference::real_loop(Lattice::line(4)),
            GaussianReference::white_noise(Lattice::line(3)),
        ] {
            let draws: Vec<FourierField> = (0..20_000u64).map(|i| sample_free_field(&r, 1, i)).collect();
            for i in 0..r.lattice.len() {
                let xs: Vec<f64> = draws.iter().map(|f| f.coeffs()[i].norm_sqr()).collect();
                let e = Estimate::of_mean(&xs);
                let v = r.variance(i);
                assert!((e.value - v).abs() <= 4.0 * e.stderr + 1e-15, "mode {i}: {e:?} vs {v}");
            }
            if r.real {
                assert!(draws[0].hermitian_defect() == 0.0);
            }
        }
    }

    #[test]
    fn domain_examples() {
        let lat = Lattice::square(6);
        let zero = FourierField::zeros(lat, false, false);
        let doms = [
            PhaseDomain::MassBall { n: 1.0 },
            PhaseDomain::MassAndSobolev { n: 1.0, kappa: 1.0, s: 0.3 },
            PhaseDomain::Decay { k1: 5.0, k2: 5.0, s: 0.2, eps: 0.1 },
        ];
        for d in &doms {
            assert!(d.contains(&zero));
        }
        let line = Lattice::line(3);
        let big = FourierField::zeros(line, false, false).with_mode([1, 0], C64::new(1.1, 0.0));
        assert!(!doms[0].contains(&big));
        let j = [3i64, 4];
        let r = 5f64;
        let ok = zero.clone().with_mode(j, C64::new(5.0 * r.powf(-0.85 - 0.01), 0.0));
        let bad = zero.clone().with_mode(j, C64::new(5.0 * r.powf(-0.84), 0.0));
        assert!(doms[2].contains(&ok));
        assert!(!doms[2].contains(&bad));
    }

    #[test]
    fn tail_of_loop_projection() {
        // E‖u − P_n u‖² = 4 Σ_{j>n} 1/j² for the complex loop
        let big = Lattice::line(64);
        let r = GaussianReference::loop_measure(big, 0.0);
        let ens = SampleEnsemble::from_reference(r, 4000, 9);
        for n in [4usize, 8, 16] {
            let exact: f64 = 4.0 * (n + 1..=64).map(|j| 1.0 / (j * j) as f64).sum::<f64>();
            let xs = ens.map(|u| u.mass() - u.resample(&big.with_cutoff(n).unwrap()).unwrap().mass());
            let e = Estimate::of_mean(&xs);
            assert!((e.value - exact).abs() / exact < 0.05, "n={n}: {e:?} vs {exact}");
        }
    }
}
