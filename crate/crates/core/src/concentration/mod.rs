//! Entropy, Dirichlet energy and LSI/Poincaré ratios of cylindrical test
//! functionals over sample ensembles, plus the increment machinery for the
//! density coefficients of the two-dimensional free field.

mod increments;

pub use increments::*;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::hamiltonian::power_integral;
use crate::spectral::{FourierField, Mode};
use crate::stats::{jackknife_sums, linear_fit, mean, Estimate, LinearFit};

/// Sparse direction field ξ = Σ ξ_k e^{ik·θ}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Direction {
    pub terms: Vec<(Mode, C64)>,
}

impl Direction {
    pub fn mode(k: Mode) -> Self {
        Self { terms: vec![(k, C64::new(1.0, 0.0))] }
    }

    pub fn new(terms: Vec<(Mode, C64)>) -> Self {
        Self { terms }
    }

    /// Complex pairing ⟨u, ξ⟩ = Σ u_k conj ξ_k.
    pub fn pair(&self, u: &FourierField) -> C64 {
        self.terms.iter().map(|(k, x)| u.get(*k) * x.conj()).sum()
    }

    /// Dense ξ on the lattice of `u` (a complex field).
    fn dense(&self, like: &FourierField, scale: C64) -> FourierField {
        let mut g = FourierField::zeros(*like.lattice(), false, true);
        let lat = *like.lattice();
        for (k, x) in &self.terms {
            if let Some(i) = lat.index(*k) {
                g.coeffs[i] += x * scale;
            }
        }
        g
    }
}

/// Cylindrical test function with a closed-form coefficient gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctional {
    /// Re⟨u, ξ⟩.
    Linear {
        xi: Direction,
    },
    /// |⟨u, ξ⟩|.
    Modulus {
        xi: Direction,
    },
    /// tanh(Σ_i w_i Re⟨u, ξ_i⟩), bounded and smooth.
    Composed {
        xis: Vec<Direction>,
        weights: Vec<f64>,
    },
    /// exp(t·Re⟨u, ξ⟩); saturates the Gaussian LSI.
    Exponential {
        xi: Direction,
        t: f64,
    },
    /// ‖u‖_{L²}.
    Norm,
    /// ∫|u|^p. Not cylindrical; used as an observable.
    Power {
        p: u32,
    },
    Constant {
        c: f64,
    },
}

impl TestFunctional {
    pub fn linear(k: Mode) -> Self {
        Self::Linear { xi: Direction::mode(k) }
    }

    /// Im û(k) as the linear functional with ξ = −i e_k.
    pub fn linear_imag(k: Mode) -> Self {
        Self::Linear { xi: Direction::new(vec![(k, C64::new(0.0, 1.0))]) }
    }

    pub fn modulus(k: Mode) -> Self {
        Self::Modulus { xi: Direction::mode(k) }
    }

    pub fn name(&self) -> String {
        let dir =
            |d: &Direction| d.terms.iter().map(|(k, _)| format!("({},{})", k[0], k[1])).collect::<Vec<_>>().join("+");
        match self {
            Self::Linear { xi } => format!("linear[{}]", dir(xi)),
            Self::Modulus { xi } => format!("modulus[{}]", dir(xi)),
            Self::Composed { xis, .. } => {
                format!("tanh[{}]", xis.iter().map(dir).collect::<Vec<_>>().join(";"))
            }
            Self::Exponential { xi, t } => format!("exp[{};{t}]", dir(xi)),
            Self::Norm => "l2_norm".into(),
            Self::Power { p } => format!("int_abs_u^{p}"),
            Self::Constant { c } => format!("constant[{c}]"),
        }
    }

    fn composed_arg(xis: &[Direction], weights: &[f64], u: &FourierField) -> f64 {
        xis.iter().zip(weights).map(|(x, w)| w * x.pair(u).re).sum()
    }

    pub fn eval(&self, u: &FourierField) -> f64 {
        match self {
            Self::Linear { xi } => xi.pair(u).re,
            Self::Modulus { xi } => xi.pair(u).norm(),
            Self::Composed { xis, weights } => Self::composed_arg(xis, weights, u).tanh(),
            Self::Exponential { xi, t } => (t * xi.pair(u).re).exp(),
            Self::Norm => u.mass().sqrt(),
            Self::Power { p } => power_integral(u, *p),
            Self::Constant { c } => *c,
        }
    }

    /// L² Riesz representer of df(u) in the tangent space of u's field class.
    pub fn gradient(&self, u: &FourierField) -> FourierField {
        let one = C64::new(1.0, 0.0);
        let g = match self {
            Self::Linear { xi } => xi.dense(u, one),
            Self::Modulus { xi } => {
                let z = xi.pair(u);
                if z.norm() == 0.0 {
                    FourierField::zeros(*u.lattice(), false, true)
                } else {
                    xi.dense(u, z / z.norm())
                }
            }
            Self::Composed { xis, weights } => {
                let s = 1.0 - Self::composed_arg(xis, weights, u).tanh().powi(2);
                let mut g = FourierField::zeros(*u.lattice(), false, true);
                for (x, w) in xis.iter().zip(weights) {
                    g = g.add(&x.dense(u, C64::new(w * s, 0.0)));
                }
                g
            }
            Self::Exponential { xi, t } => xi.dense(u, C64::new(t * self.eval(u), 0.0)),
            Self::Norm => {
                let m = u.mass().sqrt();
                if m == 0.0 {
                    FourierField::zeros(*u.lattice(), false, true)
                } else {
                    u.scale(1.0 / m).with_flags(false, true)
                }
            }
            Self::Power { p } => crate::hamiltonian::power_gradient(u, *p).with_flags(false, true),
            Self::Constant { .. } => FourierField::zeros(*u.lattice(), false, true),
        };
        // restrict to the tangent space: Hermitian for real fields, no zero mode if absent
        g.with_flags(u.is_real(), u.has_zero_mode())
    }
}

/// Dual Sobolev metric for gradients: ‖g‖² = |g_0|² + Σ_{k≠0} |k|^{−2s}|g_k|².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub s_dual: f64,
}

impl MetricSpec {
    pub const L2: Self = Self { s_dual: 0.0 };
    pub const H_MINUS_1: Self = Self { s_dual: 1.0 };

    pub fn h_minus(s: f64) -> Self {
        Self { s_dual: s }
    }

    pub fn norm_sq(&self, g: &FourierField) -> f64 {
        g.sobolev_sq(-self.s_dual, true)
    }
}

/// Ent(f²) = E[f² log f²] − E[f²] log E[f²] from values of f.
pub fn entropy_from_values(values: &[f64]) -> Estimate {
    let f2: Vec<f64> = values.iter().map(|f| f * f).collect();
    let f2l: Vec<f64> = f2.iter().map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 }).collect();
    if f2.iter().all(|&x| x == f2[0]) {
        return Estimate::new(0.0, 0.0);
    }
    jackknife_sums(&[f2, f2l], |s, n| {
        let n = n as f64;
        let a = s[0] / n;
        s[1] / n - if a > 0.0 { a * a.ln() } else { 0.0 }
    })
}

pub fn entropy_of_functional(samples: &[FourierField], f: &TestFunctional) -> Estimate {
    let vals: Vec<f64> = samples.par_iter().map(|u| f.eval(u)).collect();
    entropy_from_values(&vals)
}

fn gradient_norms(samples: &[FourierField], f: &TestFunctional, metric: &MetricSpec) -> Vec<f64> {
    samples.par_iter().map(|u| metric.norm_sq(&f.gradient(u))).collect()
}

/// E‖∇f‖² in the given metric.
pub fn dirichlet_energy(samples: &[FourierField], f: &TestFunctional, metric: &MetricSpec) -> Estimate {
    Estimate::of_mean(&gradient_norms(samples, f, metric))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InequalityMode {
    /// 2E/Ent(f²).
    Lsi,
    /// E/Var(f).
    Poincare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub functional: String,
    pub energy: Estimate,
    /// Ent(f²) or Var(f).
    pub spread: Estimate,
    pub ratio: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mode: InequalityMode,
    pub rows: Vec<RatioRow>,
    pub skipped: Vec<String>,
    /// Dictionary infimum of the ratios; None when every functional was skipped.
    pub alpha_hat: Option<Estimate>,
}

impl GapReport {
    /// α_predicted ≤ α̂ + 3σ. Empty reports never pass.
    pub fn passes(&self, alpha_predicted: f64) -> bool {
        self.alpha_hat.is_some_and(|a| a.value + 3.0 * a.stderr >= alpha_predicted)
    }
}

/// Per-functional inequality ratios and their dictionary infimum.
pub fn lsi_gap_report(
    samples: &[FourierField],
    dictionary: &[TestFunctional],
    metric: &MetricSpec,
    mode: InequalityMode,
) -> Result<GapReport> {
    if dictionary.is_empty() {
        return param("empty dictionary");
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for f in dictionary {
        let vals: Vec<f64> = samples.par_iter().map(|u| f.eval(u)).collect();
        let grads = gradient_norms(samples, f, metric);
        let (cols, spread_of): (Vec<Vec<f64>>, fn(&[f64], f64) -> f64) = match mode {
            InequalityMode::Lsi => {
                let f2: Vec<f64> = vals.iter().map(|x| x * x).collect();
                let f2l = f2.iter().map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 }).collect();
                (vec![f2, f2l, grads], |s, n| {
                    let a = s[0] / n;
                    s[1] / n - if a > 0.0 { a * a.ln() } else { 0.0 }
                })
            }
            InequalityMode::Poincare => {
                let sq = vals.iter().map(|x| x * x).collect();
                (vec![vals.clone(), sq, grads], |s, n| s[1] / n - (s[0] / n).powi(2))
            }
        };
        let spread = jackknife_sums(&cols[..2], |s, n| spread_of(s, n as f64));
        let energy = Estimate::of_mean(&cols[2]);
        let scale = mean(&cols[0].iter().map(|x| x.abs()).collect::<Vec<_>>()).max(1e-300);
        if !(spread.value > 3.0 * spread.stderr && spread.value > 1e-12 * scale) {
            skipped.push(format!(
                "{}: spread {:.3e} ± {:.1e} below noise floor",
                f.name(),
                spread.value,
                spread.stderr
            ));
            continue;
        }
        let factor = if mode == InequalityMode::Lsi { 2.0 } else { 1.0 };
        let ratio = jackknife_sums(&cols, |s, n| factor * (s[2] / n as f64) / spread_of(s, n as f64));
        rows.push(RatioRow { functional: f.name(), energy, spread, ratio });
    }
    let alpha_hat = rows.iter().map(|r| r.ratio).min_by(|a, b| a.value.total_cmp(&b.value));
    Ok(GapReport { mode, rows, skipped, alpha_hat })
}

/// Linear, modulus and tanh functionals on modes 0 < |k|_∞ ≤ kmax, and ‖u‖_{L²}.
pub fn default_dictionary(dim: usize, kmax: i64) -> Vec<TestFunctional> {
    let mut out = Vec::new();
    let modes: Vec<Mode> = if dim == 1 {
        (1..=kmax).map(|k| [k, 0]).collect()
    } else {
        let mut v = Vec::new();
        for a in -kmax..=kmax {
            for b in 0..=kmax {
                if (b > 0 || a > 0) && (a != 0 || b != 0) {
                    v.push([a, b]);
                }
            }
        }
        v
    };
    for &k in &modes {
        out.push(TestFunctional::linear(k));
        out.push(TestFunctional::linear_imag(k));
        out.push(TestFunctional::modulus(k));
    }
    for w in modes.windows(2) {
        out.push(TestFunctional::Composed {
            xis: vec![Direction::mode(w[0]), Direction::mode(w[1])],
            weights: vec![0.7, -0.4],
        });
    }
    out.push(TestFunctional::Norm);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// (t, P(|f − Ef| > t)).
    pub tail: Vec<(f64, f64)>,
    pub fit: Option<LinearFit>,
    /// −α/(2L²).
    pub required_slope: f64,
    pub pass: bool,
    /// Fewer than three populated tail bins.
    pub flagged: bool,
}

/// Gaussian concentration check: fit log P(|f − Ef| > t) against t².
pub fn lipschitz_concentration(
    samples: &[FourierField],
    f: &TestFunctional,
    lipschitz: f64,
    alpha: f64,
    fit_tolerance: f64,
) -> Result<ConcentrationReport> {
    if lipschitz <= 0.0 || samples.len() < 10 {
        return param("need L > 0 and at least ten samples");
    }
    let vals: Vec<f64> = samples.par_iter().map(|u| f.eval(u)).collect();
    let m = mean(&vals);
    let mut dev: Vec<f64> = vals.iter().map(|v| (v - m).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let total = dev.len() as f64;
    let sd = (dev.iter().map(|d| d * d).sum::<f64>() / total).sqrt();
    let required_slope = -alpha / (2.0 * lipschitz * lipschitz);
    if sd == 0.0 {
        return Ok(ConcentrationReport { tail: vec![], fit: None, required_slope, pass: true, flagged: false });
    }
    // bins from one standard deviation out to the last level with ≥ 10 exceedances
    let mut tail = Vec::new();
    let mut t = sd;
    loop {
        let above = dev.len() - dev.partition_point(|&d| d <= t);
        if above < 10 {
            break;
        }
        tail.push((t, above as f64 / total));
        t += 0.25 * sd;
    }
    let flagged = tail.len() < 3;
    let fit = (!flagged).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = tail.iter().map(|(t, p)| (t * t, p.ln())).unzip();
        linear_fit(&x, &y)
    });
    let pass = match &fit {
        Some(fit) => fit.slope <= required_slope * (1.0 - fit_tolerance),
        // no tail to speak of: bounded or degenerate, which concentrates trivially
        None => dev.last().copied().unwrap_or(0.0) <= 5.0 * sd,
    };
    Ok(ConcentrationReport { tail, fit, required_slope, pass, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{GaussianReference, SampleEnsemble};
    use crate::spectral::Lattice;

    fn fd_check(f: &TestFunctional, u: &FourierField) {
        let g = f.gradient(u);
        let lat = *u.lattice();
        let dir = FourierField::from_fn(lat, u.is_real(), u.has_zero_mode(), |k| {
            C64::new((k[0] as f64 * 0.7 + 0.3).sin(), (k[1] as f64 - k[0] as f64 * 0.4).cos())
        });
        let h = 1e-5;
        let fd = (f.eval(&u.axpy(h, &dir)) - f.eval(&u.axpy(-h, &dir))) / (2.0 * h);
        let an = g.dot(&dir);
        assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{}: fd {fd} vs {an}", f.name());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (lat, real) in [(Lattice::line(5), false), (Lattice::line(5), true), (Lattice::square(3), false)] {
            let u =
                FourierField::from_fn(lat, real, true, |k| C64::new(0.3 + 0.1 * k[0] as f64, 0.2 - 0.05 * k[1] as f64));
            let k = [1, 0];
            let fs = vec![
                TestFunctional::linear(k),
                TestFunctional::linear_imag([2, 0]),
                TestFunctional::modulus(k),
                TestFunctional::Composed {
                    xis: vec![Direction::mode(k), Direction::new(vec![([-1, 0], C64::new(0.3, 0.4))])],
                    weights: vec![0.8, -1.1],
                },
                TestFunctional::Exponential { xi: Direction::mode(k), t: 0.7 },
                TestFunctional::Norm,
                TestFunctional::Power { p: 4 },
            ];
            for f in &fs {
                fd_check(f, &u);
            }
        }
    }

    #[test]
    fn dirichlet_metric_weights() {
        let r = GaussianReference::loop_measure(Lattice::line(6), 0.0);
        let ens = SampleEnsemble::from_reference(r, 50, 1);
        let e1 = dirichlet_energy(&ens.samples, &TestFunctional::linear([1, 0]), &MetricSpec::H_MINUS_1);
        assert_eq!(e1.value, 1.0);
        let e2 = dirichlet_energy(&ens.samples, &TestFunctional::linear([2, 0]), &MetricSpec::H_MINUS_1);
        let e2l = dirichlet_energy(&ens.samples, &TestFunctional::linear([2, 0]), &MetricSpec::L2);
        assert!((e2.value / e2l.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn entropy_basics() {
        assert_eq!(entropy_from_values(&[2.0; 10]).value, 0.0);
        // f = exp(g/2), g ~ N(0, σ²): Ent(f²) = σ²/2 · e^{σ²/2}
        let r = GaussianReference::loop_measure(Lattice::line(3), 0.0);
        let ens = SampleEnsemble::from_reference(r, 40_000, 2);
        // Re c_1 has variance 1
        let f = TestFunctional::Exponential { xi: Direction::mode([1, 0]), t: 0.5 };
        let e = entropy_of_functional(&ens.samples, &f);
        let exact = 0.5 * (0.5f64).exp();
        assert!((e.value - exact).abs() < 3.0 * e.stderr, "{e:?} vs {exact}");
    }

    #[test]
    fn entropy_nonnegative_on_random_functionals() {
        let r = GaussianReference::loop_measure(Lattice::line(4), 0.0);
        let ens = SampleEnsemble::from_reference(r, 300, 3);
        for i in 0..100 {
            let a = (i as f64 * 0.37).sin();
            let f = TestFunctional::Composed {
                xis: vec![Direction::mode([1 + i % 4, 0]), Direction::mode([-(1 + i % 3), 0])],
                weights: vec![a, 1.0 - a],
            };
            assert!(entropy_of_functional(&ens.samples, &f).value >= 0.0);
        }
    }

    #[test]
    fn free_loop_lsi_ratio_at_least_one() {
        let r = GaussianReference::loop_measure(Lattice::line(4), 0.0);
        let ens = SampleEnsemble::from_reference(r, 20_000, 4);
        let dict: Vec<TestFunctional> = (1..=3).map(|k| TestFunctional::linear([k, 0])).collect();
        let rep = lsi_gap_report(&ens.samples, &dict, &MetricSpec::H_MINUS_1, InequalityMode::Lsi).unwrap();
        assert!(rep.passes(1.0), "{rep:?}");
        let p = lsi_gap_report(&ens.samples, &dict, &MetricSpec::H_MINUS_1, InequalityMode::Poincare).unwrap();
        assert!(p.passes(1.0));
        let c =
            lsi_gap_report(&ens.samples, &[TestFunctional::Constant { c: 1.0 }], &MetricSpec::L2, InequalityMode::Lsi)
                .unwrap();
        assert!(c.alpha_hat.is_none() && !c.passes(0.0));
    }

    #[test]
    fn gaussian_linear_concentration() {
        let r = GaussianReference::loop_measure(Lattice::line(3), 0.0);
        let ens = SampleEnsemble::from_reference(r, 40_000, 5);
        // Re c_1 ~ N(0, 1): Lipschitz 1 in H^{-1}, α = 1
        let rep = lipschitz_concentration(&ens.samples, &TestFunctional::linear([1, 0]), 1.0, 1.0, 0.1).unwrap();
        assert!(rep.pass && !rep.flagged, "{rep:?}");
        let bounded = TestFunctional::Composed { xis: vec![Direction::mode([1, 0])], weights: vec![0.1] };
        assert!(lipschitz_concentration(&ens.samples, &bounded, 0.1, 1.0, 0.1).unwrap().pass);
    }
}
