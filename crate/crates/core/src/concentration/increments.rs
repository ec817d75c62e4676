use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::hamiltonian::density_mode;
use crate::spectral::{FourierField, Mode};
use crate::stats::{linear_fit, Estimate, LinearFit};

/// Annular increments of the density coefficient:
/// d_r = Σ_{r−1 < |j| ≤ r} û(j) conj û(j+m), so Σ_r d_r = (|u|²)^(−m) for
/// mean-zero u. The j = 0 term lies in no annulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementSeries {
    pub m: Mode,
    /// d_1, …, d_R.
    pub increments: Vec<C64>,
    /// Set when R was reduced to the lattice's largest annulus.
    pub truncated: bool,
}

impl IncrementSeries {
    pub fn total(&self) -> C64 {
        self.increments.iter().sum()
    }
}

fn annulus(j: Mode) -> usize {
    (((j[0] * j[0] + j[1] * j[1]) as f64).sqrt() - 1e-12).ceil() as usize
}

pub fn multiplicative_increments(u: &FourierField, m: Mode, r_max: usize) -> Result<IncrementSeries> {
    let lat = u.lattice();
    if lat.dim() != 2 {
        return param("increments are defined for fields on T²");
    }
    if m == [0, 0] {
        return param("increments need m ≠ 0");
    }
    let reach = annulus([lat.n() as i64, lat.n() as i64]);
    let truncated = r_max > reach;
    let r = r_max.min(reach);
    let mut d = vec![C64::new(0.0, 0.0); r];
    for i in 0..lat.len() {
        let j = lat.mode(i);
        if j == [0, 0] {
            continue;
        }
        let a = annulus(j);
        if a == 0 || a > r {
            continue;
        }
        if let Some(t) = lat.index([j[0] + m[0], j[1] + m[1]]) {
            d[a - 1] += u.coeffs()[i] * u.coeffs()[t].conj();
        }
    }
    Ok(IncrementSeries { m, increments: d, truncated })
}

/// Direct (|u|²)^(−m) for comparison with the telescoped increments.
pub fn density_coefficient(u: &FourierField, m: Mode) -> C64 {
    density_mode(u, [-m[0], -m[1]])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityRow {
    pub r1: usize,
    pub r2: usize,
    pub m: Mode,
    /// Real and imaginary parts of the mean of d_{r1} conj d_{r2}.
    pub re: Estimate,
    pub im: Estimate,
}

impl OrthogonalityRow {
    pub fn consistent_with_zero(&self) -> bool {
        self.re.value.abs() <= 3.0 * self.re.stderr && self.im.value.abs() <= 3.0 * self.im.stderr
    }
}

/// E[d_{r1} conj d_{r2}] for r1 ≠ r2 over an ensemble.
pub fn increment_orthogonality(
    samples: &[FourierField],
    triples: &[(usize, usize, Mode)],
) -> Result<Vec<OrthogonalityRow>> {
    triples
        .iter()
        .map(|&(r1, r2, m)| {
            if r1 == r2 || r1 == 0 || r2 == 0 {
                return param("orthogonality needs distinct annuli r1, r2 ≥ 1");
            }
            let prods: Vec<C64> = samples
                .par_iter()
                .map(|u| {
                    let s = multiplicative_increments(u, m, r1.max(r2))?;
                    let get = |r: usize| s.increments.get(r - 1).copied().unwrap_or_default();
                    Ok(get(r1) * get(r2).conj())
                })
                .collect::<Result<_>>()?;
            let re: Vec<f64> = prods.iter().map(|z| z.re).collect();
            let im: Vec<f64> = prods.iter().map(|z| z.im).collect();
            Ok(OrthogonalityRow { r1, r2, m, re: Estimate::of_mean(&re), im: Estimate::of_mean(&im) })
        })
        .collect()
}

/// Fit of log max_samples |d_r| against log r.
pub fn increment_envelope(samples: &[FourierField], m: Mode, r_max: usize) -> Result<LinearFit> {
    let series: Vec<IncrementSeries> =
        samples.par_iter().map(|u| multiplicative_increments(u, m, r_max)).collect::<Result<_>>()?;
    let r = series.first().map_or(0, |s| s.increments.len());
    let (x, y): (Vec<f64>, Vec<f64>) = (2..=r)
        .filter_map(|k| {
            let mx = series.iter().map(|s| s.increments[k - 1].norm()).fold(0.0, f64::max);
            (mx > 0.0).then(|| ((k as f64).ln(), mx.ln()))
        })
        .unzip();
    if x.len() < 3 {
        return param("too few nonzero annuli for an envelope fit");
    }
    Ok(linear_fit(&x, &y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub m: Mode,
    pub moment: Estimate,
    /// Estimate from the first half of the samples.
    pub half: Estimate,
    /// Largest single term over the sum.
    pub max_weight_fraction: f64,
    pub stable: bool,
    pub kappa_too_large: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub kappa: f64,
    pub rows: Vec<MomentRow>,
    /// max/min of the moments across m.
    pub spread: f64,
    pub pass: bool,
}

/// E exp(κ²|(|u|²)^(m)|²) for each m, with stability under sample halving.
pub fn exp_square_moment(samples: &[FourierField], modes: &[Mode], kappa: f64) -> Result<MomentReport> {
    if samples.len() < 4 {
        return param("need at least four samples");
    }
    let rows: Vec<MomentRow> = modes
        .iter()
        .map(|&m| {
            let x: Vec<f64> =
                samples.par_iter().map(|u| (kappa * kappa * density_mode(u, m).norm_sqr()).exp()).collect();
            let moment = Estimate::of_mean(&x);
            let half = Estimate::of_mean(&x[..x.len() / 2]);
            let total: f64 = x.iter().sum();
            let max_weight_fraction = x.iter().copied().fold(0.0, f64::max) / total;
            let kappa_too_large = max_weight_fraction > 0.5;
            let stable = moment.value.is_finite() && moment.agrees(&half, 3.0) && !kappa_too_large;
            MomentRow { m, moment, half, max_weight_fraction, stable, kappa_too_large }
        })
        .collect();
    let hi = rows.iter().map(|r| r.moment.value).fold(f64::MIN, f64::max);
    let lo = rows.iter().map(|r| r.moment.value).fold(f64::MAX, f64::min);
    let spread = hi / lo;
    let pass = rows.iter().all(|r| r.stable) && spread.is_finite();
    Ok(MomentReport { kappa, rows, spread, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Lattice;

    #[test]
    fn zero_field_has_zero_increments() {
        let u = FourierField::zeros(Lattice::square(4), false, false);
        let s = multiplicative_increments(&u, [1, 0], 5).unwrap();
        assert!(s.increments.iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn two_mode_hand_expansion() {
        // û(j₀) = a, û(j₀+m) = b: only d at annulus |j₀| is nonzero, equal to a conj b
        let (a, b) = (C64::new(1.0, 0.5), C64::new(-0.3, 2.0));
        let u = FourierField::zeros(Lattice::square(6), false, false).with_mode([3, 1], a).with_mode([4, 1], b);
        let s = multiplicative_increments(&u, [1, 0], 8).unwrap();
        for (r, d) in s.increments.iter().enumerate() {
            if r + 1 == 4 {
                assert!((d - a * b.conj()).norm() < 1e-15);
            } else {
                assert_eq!(d.norm(), 0.0);
            }
        }
        assert!(s.truncated == false);
    }

    #[test]
    fn increments_telescope() {
        let lat = Lattice::square(7);
        let u = FourierField::from_fn(lat, false, false, |k| {
            C64::new((k[0] as f64 * 1.3).sin(), (k[1] as f64 * 0.7 + k[0] as f64).cos())
        });
        for m in [[1, 0], [3, 4], [-2, 5]] {
            let s = multiplicative_increments(&u, m, 100).unwrap();
            assert!(s.truncated);
            let direct = density_coefficient(&u, m);
            assert!((s.total() - direct).norm() <= 1e-10 * direct.norm());
        }
        assert!(multiplicative_increments(&u, [0, 0], 3).is_err());
    }

    #[test]
    fn zero_kappa_moment_is_one() {
        let u = FourierField::zeros(Lattice::square(2), false, false).with_mode([1, 1], C64::new(1.0, 0.0));
        let rep = exp_square_moment(&vec![u; 8], &[[1, 0]], 0.0).unwrap();
        assert_eq!(rep.rows[0].moment.value, 1.0);
    }
}
