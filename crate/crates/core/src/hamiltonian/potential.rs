use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FourierField, Lattice, Mode};

/// Real, even pair potential V on T², described by its Fourier transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum Potential {
    /// V(θ) = Σ a_i cos(m_i·θ), so V̂(±m_i) = a_i/2.
    Cosine(Vec<(Mode, f64)>),
    /// Soft-sphere bump with V̂(m) = amplitude·exp(−|m|²/width²) for every m.
    Gaussian { amplitude: f64, width: f64 },
    /// Coefficients tabulated on a lattice, zero outside it. Must be real and even.
    Tabulated(Vec<(Mode, f64)>),
}

impl Potential {
    /// V = cos θ₁ + cos θ₂, V̂(0) = 0.
    pub fn cosine_pair() -> Self {
        Self::Cosine(vec![([1, 0], 1.0), ([0, 1], 1.0)])
    }

    pub fn soft_sphere(amplitude: f64, width: f64) -> Self {
        Self::Gaussian { amplitude, width }
    }

    /// Take V̂ from a real field; rejects coefficients that are not real and even.
    pub fn from_field(v: &FourierField) -> Result<Self> {
        let lat = v.lattice();
        let mut out = Vec::new();
        for i in 0..lat.len() {
            let c = v.coeffs()[i];
            let d = v.coeffs()[lat.neg(i)];
            if c.im.abs() > 1e-12 * (1.0 + c.re.abs()) || (c.re - d.re).abs() > 1e-12 * (1.0 + c.re.abs()) {
                return Err(Error::Parameter("potential must be real and even".into()));
            }
            if c.re != 0.0 {
                out.push((lat.mode(i), c.re));
            }
        }
        Ok(Self::Tabulated(out))
    }

    pub fn hat(&self, m: Mode) -> f64 {
        match self {
            Self::Cosine(terms) => terms
                .iter()
                .map(|(k, a)| {
                    let mut s = 0.0;
                    if *k == m {
                        s += 0.5 * a;
                    }
                    if [-k[0], -k[1]] == m {
                        s += 0.5 * a;
                    }
                    s
                })
                .sum(),
            Self::Gaussian { amplitude, width } => {
                let k2 = (m[0] * m[0] + m[1] * m[1]) as f64;
                amplitude * (-k2 / (width * width)).exp()
            }
            Self::Tabulated(t) => t.iter().find(|(k, _)| *k == m).map_or(0.0, |(_, a)| *a),
        }
    }

    pub fn hat_zero(&self) -> f64 {
        self.hat([0, 0])
    }

    /// Modes with nonzero V̂ if the support is finite.
    pub fn finite_support(&self) -> Option<Vec<(Mode, f64)>> {
        match self {
            Self::Cosine(_) => {
                let mut out: Vec<(Mode, f64)> = Vec::new();
                if let Self::Cosine(terms) = self {
                    for (k, _) in terms {
                        for m in [*k, [-k[0], -k[1]]] {
                            if !out.iter().any(|(x, _)| *x == m) {
                                out.push((m, self.hat(m)));
                            }
                        }
                    }
                }
                out.retain(|(_, a)| *a != 0.0);
                Some(out)
            }
            Self::Tabulated(t) => Some(t.clone()),
            Self::Gaussian { .. } => None,
        }
    }

    /// sup |V| bounded by Σ|V̂(m)|; exact when all V̂ ≥ 0 (the maximum is at θ = 0).
    pub fn sup_norm(&self) -> f64 {
        match self {
            Self::Gaussian { amplitude, width } => {
                // product of 1D theta sums Σ_j exp(−j²/w²)
                let mut s = 0.0;
                let mut j = 0i64;
                loop {
                    let t = (-((j * j) as f64) / (width * width)).exp();
                    s += if j == 0 { t } else { 2.0 * t };
                    if t < 1e-18 {
                        break;
                    }
                    j += 1;
                }
                amplitude.abs() * s * s
            }
            _ => self.finite_support().unwrap_or_default().iter().map(|(_, a)| a.abs()).sum(),
        }
    }

    /// Σ_m |m|^{2r}|V̂(m)|², truncated at |m_j| ≤ cutoff for infinite support.
    pub fn sobolev_sq(&self, r: f64, cutoff: usize) -> f64 {
        let c = cutoff as i64;
        let mut s = 0.0;
        for a in -c..=c {
            for b in -c..=c {
                let m = [a, b];
                let v = self.hat(m);
                if v == 0.0 {
                    continue;
                }
                let w = if a == 0 && b == 0 { 1.0 } else { ((a * a + b * b) as f64).powf(r) };
                s += w * v * v;
            }
        }
        s
    }

    /// V̂ tabulated on a lattice as a real field.
    pub fn to_field(&self, lattice: Lattice) -> FourierField {
        FourierField::from_fn(lattice, true, true, |m| C64::new(self.hat(m), 0.0))
    }
}
