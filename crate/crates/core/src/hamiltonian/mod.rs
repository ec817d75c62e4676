//! Energies, gradients and Hessian forms of the truncated Hamiltonians.
//!
//! Gradients are L² Riesz representers: ⟨∇H(u), v⟩ = Σ Re(g_k conj v_k) is
//! the directional derivative of H at u along v.

mod convexity;
mod potential;

pub use convexity::*;
pub use potential::Potential;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::spectral::{analyze, exact_grid, grid_mean, synth, FourierField};

/// Which Hamiltonian, with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    /// H = ½∫|∇u|² − λ/p ∫|u|^p + M/2 ∫|u|², complex u on T^D.
    /// `mass_penalty` M convexifies the critical p = 6 case.
    Nls {
        p: u32,
        lambda: f64,
        dim: usize,
        #[serde(default)]
        mass_penalty: f64,
    },
    /// H = ½∫u'² − λ/6 ∫u³, real mean-zero u on T.
    Kdv { lambda: f64 },
    /// Envelope factor ½∫|u'|² − ¼∫|P_n|u|²|² on the mass ball of radius `b`,
    /// plus Gaussian factors for ñ and W.
    Zakharov { b: f64 },
    /// H_n = ½∫|∇u|² − λ/4 ∫(V∗|u|²)|u|² + λ/2·κV̂(0)(N_n+B)∫|u|² on T².
    Gp { potential: Potential, lambda: f64, kappa: f64, rho: f64, b: f64 },
}

impl ModelSpec {
    pub fn nls(p: u32, lambda: f64) -> Self {
        Self::Nls { p, lambda, dim: 1, mass_penalty: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Nls { p, dim, mass_penalty, .. } => {
                if !(2..=6).contains(p) {
                    return param(format!("NLS exponent p = {p} outside 2..=6"));
                }
                if *dim != 1 && *dim != 2 {
                    return param("NLS dimension must be 1 or 2");
                }
                if *mass_penalty < 0.0 {
                    return param("mass penalty must be nonnegative");
                }
            }
            Self::Kdv { lambda } => {
                if *lambda < 0.0 {
                    return param("KdV requires λ ≥ 0");
                }
            }
            Self::Zakharov { b } => {
                if *b <= 0.0 {
                    return param("Zakharov mass radius B must be positive");
                }
            }
            Self::Gp { rho, kappa, b, .. } => {
                if *rho <= 0.0 {
                    return param("GP requires ρ > 0");
                }
                if *kappa < 0.0 || *b < 0.0 {
                    return param("GP requires κ, B ≥ 0");
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Nls { dim, .. } => *dim,
            Self::Gp { .. } => 2,
            _ => 1,
        }
    }

    /// KdV fields are real; everything else is complex.
    pub fn is_real(&self) -> bool {
        matches!(self, Self::Kdv { .. })
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Self::Nls { lambda, .. } | Self::Kdv { lambda } | Self::Gp { lambda, .. } => *lambda,
            Self::Zakharov { .. } => 1.0,
        }
    }

    /// GP Wick counterterm coefficient κV̂(0)(N_n + B); zero for other models.
    pub fn counterterm(&self, n: usize) -> f64 {
        match self {
            Self::Gp { potential, kappa, rho, b, .. } => kappa * potential.hat_zero() * (number_operator(n, *rho) + b),
            _ => 0.0,
        }
    }

    pub(crate) fn check_field(&self, u: &FourierField) -> Result<()> {
        if u.lattice().dim() != self.dim() {
            return Err(Error::Mismatch(format!(
                "model is {}-dimensional, field is {}-dimensional",
                self.dim(),
                u.lattice().dim()
            )));
        }
        if self.is_real() && !u.is_real() {
            return Err(Error::Mismatch("KdV requires a real field".into()));
        }
        Ok(())
    }
}

/// N_n = Σ_{|k_1|,|k_2| ≤ n} 2/(|k|² + ρ).
pub fn number_operator(n: usize, rho: f64) -> f64 {
    let n = n as i64;
    let mut terms = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
    for a in -n..=n {
        for b in -n..=n {
            terms.push(2.0 / ((a * a + b * b) as f64 + rho));
        }
    }
    crate::stats::sum(terms)
}

/// ½ Σ |k|²|c_k|² = ½∫|∇u|².
pub fn kinetic(u: &FourierField) -> f64 {
    let lat = u.lattice();
    0.5 * u.coeffs().iter().enumerate().map(|(i, c)| lat.k2(i) * c.norm_sqr()).sum::<f64>()
}

fn kinetic_form(v: &FourierField) -> f64 {
    2.0 * kinetic(v)
}

pub(crate) fn kinetic_gradient(u: &FourierField) -> FourierField {
    let lat = *u.lattice();
    let mut g = u.clone();
    for (i, c) in g.coeffs.iter_mut().enumerate() {
        *c *= lat.k2(i);
    }
    g
}

/// P_n of a pointwise nonlinearity f(u), evaluated on a grid exact for a
/// product of total degree `degree`·n.
fn project_nonlinear(u: &FourierField, degree: usize, f: impl Fn(C64) -> C64) -> FourierField {
    let lat = *u.lattice();
    let m = exact_grid(&lat, degree);
    let mut g = synth(&lat, u.coeffs(), m);
    g.iter_mut().for_each(|z| *z = f(*z));
    let mut out = FourierField::raw(lat, analyze(&lat, &g, m), u.is_real(), u.has_zero_mode());
    out.enforce();
    out
}

/// |u|^p with |0|^p handled for p ≥ 0.
fn abs_pow(z: C64, p: i32) -> f64 {
    let r = z.norm();
    if r == 0.0 {
        if p == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        r.powi(p)
    }
}

/// Exact ∫|u|^p for even p; grid quadrature otherwise.
pub(crate) fn power_integral(u: &FourierField, p: u32) -> f64 {
    let lat = u.lattice();
    let m = exact_grid(lat, p as usize);
    let g = synth(lat, u.coeffs(), m);
    grid_mean(&g, |z| abs_pow(z, p as i32))
}

/// L² gradient of ∫|u|^p: p P_n(|u|^{p−2}u).
pub(crate) fn power_gradient(u: &FourierField, p: u32) -> FourierField {
    let e = p as i32 - 2;
    project_nonlinear(u, p as usize, |z| z * abs_pow(z, e)).scale(p as f64)
}

/// Σ_m V̂(m)|ρ̂(m)|² = ∫(V∗|u|²)|u|².
pub(crate) fn convolution_quartic(u: &FourierField, potential: &Potential) -> f64 {
    if let Some(support) = potential.finite_support() {
        if support.len() <= 32 {
            return support.iter().map(|(m, a)| a * density_mode(u, *m).norm_sqr()).sum();
        }
    }
    let rho = u.modulus_squared();
    let lat = *rho.lattice();
    rho.coeffs().iter().enumerate().map(|(i, c)| potential.hat(lat.mode(i)) * c.norm_sqr()).sum()
}

/// (|u|²)^(m) = Σ_j û(j+m) conj û(j), by direct summation.
pub fn density_mode(u: &FourierField, m: [i64; 2]) -> C64 {
    let lat = u.lattice();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..lat.len() {
        let j = lat.mode(i);
        if let Some(t) = lat.index([j[0] + m[0], j[1] + m[1]]) {
            s += u.coeffs()[t] * u.coeffs()[i].conj();
        }
    }
    s
}

/// H − ½∫|∇u|²: the non-Gaussian part of the energy.
pub fn interaction(model: &ModelSpec, u: &FourierField) -> Result<f64> {
    model.check_field(u)?;
    Ok(match model {
        ModelSpec::Nls { p, lambda, mass_penalty, .. } => {
            let quartic = if *lambda == 0.0 { 0.0 } else { power_integral(u, *p) };
            -lambda / *p as f64 * quartic + 0.5 * mass_penalty * u.mass()
        }
        ModelSpec::Kdv { lambda } => {
            if *lambda == 0.0 {
                0.0
            } else {
                -lambda / 6.0 * u.real_power_integral(3)
            }
        }
        ModelSpec::Zakharov { .. } => -0.25 * projected_density(u).mass(),
        ModelSpec::Gp { potential, lambda, .. } => {
            if *lambda == 0.0 {
                0.0
            } else {
                let c = model.counterterm(u.lattice().n());
                -lambda / 4.0 * convolution_quartic(u, potential) + 0.5 * lambda * c * u.mass()
            }
        }
    })
}

/// Energy of a single field. For Zakharov this is the envelope factor only;
/// see [`energy_zakharov`] for the full system.
pub fn energy(model: &ModelSpec, u: &FourierField) -> Result<f64> {
    Ok(kinetic(u) + interaction(model, u)?)
}

/// P_n(|u|²) on the lattice of u.
pub(crate) fn projected_density(u: &FourierField) -> FourierField {
    u.modulus_squared().resample(u.lattice()).expect("same dimension")
}

/// L² gradient of the energy.
pub fn gradient(model: &ModelSpec, u: &FourierField) -> Result<FourierField> {
    model.check_field(u)?;
    let mut g = kinetic_gradient(u);
    match model {
        ModelSpec::Nls { p, lambda, mass_penalty, .. } => {
            if *lambda != 0.0 {
                let e = *p as i32 - 2;
                let nl = project_nonlinear(u, *p as usize, |z| z * abs_pow(z, e));
                g = g.axpy(-lambda, &nl);
            }
            g = g.axpy(*mass_penalty, u);
        }
        ModelSpec::Kdv { lambda } => {
            if *lambda != 0.0 {
                let nl = project_nonlinear(u, 3, |z| C64::new(z.re * z.re, 0.0));
                g = g.axpy(-0.5 * lambda, &nl);
            }
        }
        ModelSpec::Zakharov { .. } => {
            g = g.axpy(-1.0, &multiply_by_field(u, &projected_density(u)));
        }
        ModelSpec::Gp { potential, lambda, .. } => {
            if *lambda != 0.0 {
                let vr = convolved_density(u, potential);
                g = g.axpy(-lambda, &multiply_by_field(u, &vr));
                g = g.axpy(lambda * model.counterterm(u.lattice().n()), u);
            }
        }
    }
    Ok(g)
}

/// V ∗ |u|² on the doubled lattice.
fn convolved_density(u: &FourierField, potential: &Potential) -> FourierField {
    let rho = u.modulus_squared();
    rho.multiply(|m| C64::new(potential.hat(m), 0.0)).with_flags(true, true)
}

/// P_n(a·u) for a real multiplier field `a` with cutoff at most 2n.
pub(crate) fn multiply_by_field(u: &FourierField, a: &FourierField) -> FourierField {
    let lat = *u.lattice();
    let m = exact_grid(&lat, 4).max(crate::spectral::fft_friendly(a.lattice().n() + 2 * lat.n() + 1));
    let ag = synth(a.lattice(), a.coeffs(), m);
    let mut ug = synth(&lat, u.coeffs(), m);
    ug.iter_mut().zip(&ag).for_each(|(z, w)| *z *= w.re);
    let mut out = FourierField::raw(lat, analyze(&lat, &ug, m), u.is_real(), u.has_zero_mode());
    out.enforce();
    out
}

/// Second directional derivative d²/dt² H(u + tv) at t = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianProbe {
    pub value: f64,
    pub kinetic: f64,
    pub interaction: f64,
}

pub fn hessian_quadratic_form(model: &ModelSpec, u: &FourierField, v: &FourierField) -> Result<HessianProbe> {
    model.check_field(u)?;
    model.check_field(v)?;
    if u.lattice() != v.lattice() {
        return Err(Error::Mismatch("base and direction on different lattices".into()));
    }
    let kin = kinetic_form(v);
    let lat = *u.lattice();
    let inter = match model {
        ModelSpec::Nls { p, lambda, mass_penalty, .. } => {
            let mut acc = mass_penalty * v.mass();
            if *lambda != 0.0 {
                let m = exact_grid(&lat, *p as usize);
                let ug = synth(&lat, u.coeffs(), m);
                let vg = synth(&lat, v.coeffs(), m);
                let pf = *p as f64;
                let vals: Vec<f64> = ug
                    .iter()
                    .zip(&vg)
                    .map(|(a, b)| {
                        let r = a.norm();
                        let re = a.re * b.re + a.im * b.im;
                        let cross =
                            if r == 0.0 { 0.0 } else { (pf - 2.0) * abs_pow(*a, *p as i32 - 2) * (re / r).powi(2) };
                        cross + abs_pow(*a, *p as i32 - 2) * b.norm_sqr()
                    })
                    .collect();
                acc -= lambda * crate::stats::sum(vals) / ug.len() as f64;
            }
            acc
        }
        ModelSpec::Kdv { lambda } => {
            if *lambda == 0.0 {
                0.0
            } else {
                let m = exact_grid(&lat, 3);
                let ug = synth(&lat, u.coeffs(), m);
                let vg = synth(&lat, v.coeffs(), m);
                let s = crate::stats::sum(ug.iter().zip(&vg).map(|(a, b)| a.re * b.re * b.re));
                -lambda * s / ug.len() as f64
            }
        }
        ModelSpec::Zakharov { .. } => {
            let (sigma, vv, rho) = mixed_densities(u, v);
            let small = |f: &FourierField| f.resample(&lat).expect("dim");
            let s = small(&sigma);
            let r = small(&rho);
            let w = small(&vv);
            -0.5 * s.mass() - r.dot(&w)
        }
        ModelSpec::Gp { potential, lambda, .. } => {
            if *lambda == 0.0 {
                0.0
            } else {
                let (sigma, vv, rho) = mixed_densities(u, v);
                let dl = *sigma.lattice();
                let mut q1 = 0.0;
                let mut q2 = 0.0;
                for i in 0..dl.len() {
                    let vh = potential.hat(dl.mode(i));
                    if vh == 0.0 {
                        continue;
                    }
                    q1 += vh * sigma.coeffs()[i].norm_sqr();
                    q2 += vh * (vv.coeffs()[i] * rho.coeffs()[i].conj()).re;
                }
                lambda * model.counterterm(lat.n()) * v.mass() - lambda * (0.5 * q1 + q2)
            }
        }
    };
    Ok(HessianProbe { value: kin + inter, kinetic: kin, interaction: inter })
}

/// (σ, |v|², |u|²) on the doubled lattice with σ = u v̄ + ū v.
fn mixed_densities(u: &FourierField, v: &FourierField) -> (FourierField, FourierField, FourierField) {
    let lat = *u.lattice();
    let big = lat.with_cutoff(2 * lat.n()).expect("n >= 1");
    let m = exact_grid(&lat, 4);
    let ug = synth(&lat, u.coeffs(), m);
    let vg = synth(&lat, v.coeffs(), m);
    let build = |f: &dyn Fn(C64, C64) -> f64| {
        let g: Vec<C64> = ug.iter().zip(&vg).map(|(a, b)| C64::new(f(*a, *b), 0.0)).collect();
        let mut out = FourierField::raw(big, analyze(&big, &g, m), true, true);
        out.enforce();
        out
    };
    let sigma = build(&|a, b| 2.0 * (a.re * b.re + a.im * b.im));
    let vv = build(&|_, b| b.norm_sqr());
    let rho = build(&|a, _| a.norm_sqr());
    (sigma, vv, rho)
}

/// State of the truncated Zakharov system: envelope u, ion density n, and v = ∂n/∂t.
#[derive(Clone, Debug, PartialEq)]
pub struct ZakharovState {
    pub u: FourierField,
    pub n: FourierField,
    pub v: FourierField,
}

impl ZakharovState {
    pub fn new(u: FourierField, n: FourierField, v: FourierField) -> Result<Self> {
        if u.lattice() != n.lattice() || u.lattice() != v.lattice() || u.lattice().dim() != 1 {
            return Err(Error::Mismatch("Zakharov fields must share a 1D lattice".into()));
        }
        if !n.is_real() || !v.is_real() {
            return Err(Error::Parameter("n and v must be real".into()));
        }
        Ok(Self { u, n, v })
    }

    /// ñ = (n + P_n|u|²)/√2.
    pub fn ntilde(&self) -> FourierField {
        self.n.with_flags(true, true).add(&projected_density(&self.u)).scale(std::f64::consts::FRAC_1_SQRT_2)
    }

    /// V with V̂(k) = v̂(k)/(ik); needs v̂(0) = 0.
    pub fn potential_v(&self) -> Result<FourierField> {
        self.require_mean_zero_v()?;
        Ok(self
            .v
            .multiply(|k| if k[0] == 0 { C64::new(0.0, 0.0) } else { C64::new(0.0, -1.0 / k[0] as f64) })
            .with_flags(true, false))
    }

    /// W = (d/dθ)^{-1} V/√2, so Ŵ(k) = −v̂(k)/(√2 k²).
    pub fn w_field(&self) -> Result<FourierField> {
        self.require_mean_zero_v()?;
        Ok(self
            .v
            .multiply(|k| {
                if k[0] == 0 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(-std::f64::consts::FRAC_1_SQRT_2 / (k[0] * k[0]) as f64, 0.0)
                }
            })
            .with_flags(true, false))
    }

    fn require_mean_zero_v(&self) -> Result<()> {
        let v0 = self.v.get([0, 0]).norm();
        if v0 > 1e-12 * (1.0 + self.v.mass().sqrt()) {
            return Err(Error::Parameter(format!("∂n/∂t has nonzero mean {v0:e}; V undefined")));
        }
        Ok(())
    }

    /// Inverse of (n, v) ↦ (ñ, W).
    pub fn from_transformed(u: FourierField, ntilde: &FourierField, w: &FourierField) -> Result<Self> {
        let n = ntilde.scale(std::f64::consts::SQRT_2).sub(&projected_density(&u)).with_flags(true, true);
        let v = w.multiply(|k| C64::new(-std::f64::consts::SQRT_2 * (k[0] * k[0]) as f64, 0.0)).with_flags(true, true);
        Self::new(u, n, v)
    }

    pub fn mass(&self) -> f64 {
        self.u.mass()
    }
}

/// Full Zakharov energy ½∫|u'|² − ¼∫|P_n|u|²|² + ½∫ñ² + ½∫W'².
///
/// Equals ½∫|u'|² + ½∫n|u|² + ¼∫n² + ¼∫V², the invariant of the truncated flow.
pub fn energy_zakharov(state: &ZakharovState) -> Result<f64> {
    let nt = state.ntilde();
    let w = state.w_field()?;
    Ok(energy(&ModelSpec::Zakharov { b: 1.0 }, &state.u)? + 0.5 * nt.mass() + kinetic(&w))
}

/// Gradient in the transformed coordinates (u, ñ, W).
pub fn gradient_zakharov(state: &ZakharovState) -> Result<(FourierField, FourierField, FourierField)> {
    let gu = gradient(&ModelSpec::Zakharov { b: 1.0 }, &state.u)?;
    let nt = state.ntilde();
    let w = kinetic_gradient(&state.w_field()?);
    Ok((gu, nt, w))
}

/// Energy as a function of the transformed coordinates directly.
pub fn energy_zakharov_transformed(u: &FourierField, ntilde: &FourierField, w: &FourierField) -> Result<f64> {
    Ok(energy(&ModelSpec::Zakharov { b: 1.0 }, u)? + 0.5 * ntilde.mass() + kinetic(w))
}

/// Second variation in transformed coordinates along (du, dñ, dW).
pub fn hessian_zakharov(
    u: &FourierField,
    du: &FourierField,
    dn: &FourierField,
    dw: &FourierField,
) -> Result<HessianProbe> {
    let h = hessian_quadratic_form(&ModelSpec::Zakharov { b: 1.0 }, u, du)?;
    let extra = dn.mass() + kinetic_form(dw);
    Ok(HessianProbe {
        value: h.value + extra,
        kinetic: h.kinetic + kinetic_form(dw),
        interaction: h.interaction + dn.mass(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rnd(lat: Lattice, real: bool, zero: bool, amp: f64, seed: u64) -> FourierField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FourierField::from_fn(lat, real, zero, |k| {
            let d = 1.0 + (k[0] * k[0] + k[1] * k[1]) as f64;
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (amp / d)
        })
    }

    fn unit(lat: Lattice, real: bool) -> FourierField {
        FourierField::zeros(lat, real, false).with_mode([1, 0], C64::new(1.0, 0.0))
    }

    #[test]
    fn nls_examples() {
        let lat = Lattice::line(4);
        let u = unit(lat, false);
        assert!((energy(&ModelSpec::nls(4, 0.0), &u).unwrap() - 0.5).abs() < 1e-15);
        assert!((energy(&ModelSpec::nls(4, 1.0), &u).unwrap() - 0.25).abs() < 1e-14);
        let g = gradient(&ModelSpec::nls(4, 0.0), &u).unwrap();
        assert_eq!(g, u);
        assert_eq!(energy(&ModelSpec::nls(4, 1.0), &FourierField::zeros(lat, false, false)).unwrap(), 0.0);
    }

    #[test]
    fn kdv_example() {
        // u = 2cosθ, λ = 6: ½∫u'² = 1 under dθ/2π and ∫u³ = 0
        let lat = Lattice::line(4);
        let u = unit(lat, true);
        let h = energy(&ModelSpec::Kdv { lambda: 6.0 }, &u).unwrap();
        let m = 64;
        let q: f64 = (0..m)
            .map(|j| {
                let t = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                0.5 * (2.0 * t.sin()).powi(2) - (2.0 * t.cos()).powi(3)
            })
            .sum::<f64>()
            / m as f64;
        assert!((h - q).abs() < 1e-13);
        assert!((h - 1.0).abs() < 1e-13);
    }

    #[test]
    fn number_operator_values() {
        assert_eq!(number_operator(0, 1.0), 2.0);
        assert!((number_operator(1, 1.0) - 26.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn gp_constant_density_has_no_interaction_gradient() {
        let lat = Lattice::square(3);
        let u = FourierField::zeros(lat, false, true).with_mode([1, 2], C64::new(0.7, 0.2));
        let model = ModelSpec::Gp { potential: Potential::cosine_pair(), lambda: 1.0, kappa: 1.0, rho: 1.0, b: 1.0 };
        let g = gradient(&model, &u).unwrap();
        let kin = kinetic_gradient(&u);
        assert!(g.sub(&kin).mass() < 1e-28);
    }

    fn fd_gradient_err(model: &ModelSpec, u: &FourierField, v: &FourierField, t: f64) -> f64 {
        let g = gradient(model, u).unwrap();
        let fd = (energy(model, &u.axpy(t, v)).unwrap() - energy(model, &u.axpy(-t, v)).unwrap()) / (2.0 * t);
        (g.dot(v) - fd).abs()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let models = [
            (ModelSpec::nls(4, 1.3), Lattice::line(6), false),
            (ModelSpec::Nls { p: 6, lambda: 0.7, dim: 1, mass_penalty: 2.0 }, Lattice::line(5), false),
            (ModelSpec::Nls { p: 4, lambda: 0.5, dim: 2, mass_penalty: 0.0 }, Lattice::square(3), false),
            (ModelSpec::Kdv { lambda: 2.0 }, Lattice::line(6), true),
            (ModelSpec::Zakharov { b: 1.0 }, Lattice::line(6), false),
            (
                ModelSpec::Gp {
                    potential: Potential::soft_sphere(1.0, 2.0),
                    lambda: 0.8,
                    kappa: 2.0,
                    rho: 1.0,
                    b: 1.0,
                },
                Lattice::square(3),
                false,
            ),
        ];
        for (i, (model, lat, real)) in models.iter().enumerate() {
            let zero = matches!(model, ModelSpec::Gp { .. }) || lat.dim() == 2;
            let u = rnd(*lat, *real, zero, 1.0, 100 + i as u64);
            let v = rnd(*lat, *real, zero, 1.0, 200 + i as u64);
            let e1 = fd_gradient_err(model, &u, &v, 1e-2);
            let e2 = fd_gradient_err(model, &u, &v, 5e-3);
            assert!(e1 < 1e-3, "model {i}: {e1}");
            let ratio = e1 / e2;
            assert!((ratio - 4.0).abs() < 0.5, "model {i}: ratio {ratio}");
        }
    }

    #[test]
    fn hessians_match_second_differences() {
        let models = [
            (ModelSpec::nls(4, 1.3), Lattice::line(6), false),
            (ModelSpec::Nls { p: 6, lambda: 0.7, dim: 1, mass_penalty: 2.0 }, Lattice::line(5), false),
            (ModelSpec::Kdv { lambda: 2.0 }, Lattice::line(6), true),
            (ModelSpec::Zakharov { b: 1.0 }, Lattice::line(6), false),
            (
                ModelSpec::Gp { potential: Potential::cosine_pair(), lambda: 0.8, kappa: 2.0, rho: 1.0, b: 1.0 },
                Lattice::square(3),
                false,
            ),
        ];
        for (i, (model, lat, real)) in models.iter().enumerate() {
            let u = rnd(*lat, *real, true, 1.0, 300 + i as u64);
            let v = rnd(*lat, *real, true, 1.0, 400 + i as u64);
            let t = 1e-3;
            let h0 = energy(model, &u).unwrap();
            let fd =
                (energy(model, &u.axpy(t, &v)).unwrap() - 2.0 * h0 + energy(model, &u.axpy(-t, &v)).unwrap()) / (t * t);
            let hp = hessian_quadratic_form(model, &u, &v).unwrap();
            assert!((hp.value - fd).abs() < 1e-5 * (1.0 + fd.abs()), "model {i}: {} vs {fd}", hp.value);
            let h2 = hessian_quadratic_form(model, &u, &v.scale(2.0)).unwrap();
            assert!((h2.value - 4.0 * hp.value).abs() < 1e-10 * hp.value.abs().max(1.0));
        }
    }

    #[test]
    fn nls_unit_mode_hessian() {
        // u = v = e^{iθ}, p = 4: H((1+t)e^{iθ}) = ½(1+t)² − ¼(1+t)⁴
        let lat = Lattice::line(4);
        let u = unit(lat, false);
        let h = hessian_quadratic_form(&ModelSpec::nls(4, 1.0), &u, &u).unwrap();
        assert!((h.kinetic - 1.0).abs() < 1e-14);
        assert!((h.interaction + 3.0).abs() < 1e-13);
    }

    #[test]
    fn phase_rotation_invariance() {
        let lat = Lattice::line(6);
        let u = rnd(lat, false, false, 1.0, 7);
        for model in [
            ModelSpec::nls(4, 1.0),
            ModelSpec::Gp { potential: Potential::cosine_pair(), lambda: 1.0, kappa: 1.0, rho: 1.0, b: 0.0 },
        ] {
            let u = if model.dim() == 2 { rnd(Lattice::square(3), false, true, 1.0, 8) } else { u.clone() };
            let r = u.rotate(0.83);
            let (e0, e1) = (energy(&model, &u).unwrap(), energy(&model, &r).unwrap());
            assert!((e0 - e1).abs() < 1e-12 * e0.abs().max(1.0));
            let g0 = gradient(&model, &u).unwrap().rotate(0.83);
            let g1 = gradient(&model, &r).unwrap();
            assert!(g0.sub(&g1).mass().sqrt() < 1e-12 * g0.mass().sqrt().max(1.0));
        }
    }

    #[test]
    fn zakharov_transform_roundtrip_and_energy_identity() {
        let lat = Lattice::line(6);
        let u = rnd(lat, false, false, 1.0, 9);
        let n = rnd(lat, true, true, 1.0, 10);
        let v = rnd(lat, true, false, 1.0, 11);
        let s = ZakharovState::new(u.clone(), n.clone(), v.clone()).unwrap();
        let back = ZakharovState::from_transformed(u.clone(), &s.ntilde(), &s.w_field().unwrap()).unwrap();
        assert!(back.n.sub(&n).mass() < 1e-26);
        assert!(back.v.sub(&v).mass() < 1e-26);
        // ½∫|u'|² + ½∫n|u|² + ¼∫n² + ¼∫V²
        let rho = u.modulus_squared().resample(&lat).unwrap();
        let vv = s.potential_v().unwrap();
        let direct = kinetic(&u) + 0.5 * n.dot(&rho) + 0.25 * n.mass() + 0.25 * vv.mass();
        let e = energy_zakharov(&s).unwrap();
        assert!((e - direct).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let u = FourierField::zeros(Lattice::square(2), false, true);
        assert!(energy(&ModelSpec::nls(4, 1.0), &u).is_err());
        let c = FourierField::zeros(Lattice::line(2), false, false);
        assert!(energy(&ModelSpec::Kdv { lambda: 1.0 }, &c).is_err());
    }
}
