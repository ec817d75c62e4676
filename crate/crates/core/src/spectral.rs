//! Fourier-coefficient fields on the torus T^D, D in {1, 2}.
//!
//! Integrals carry the normalized measure dθ/(2π)^D, so the coefficients
//! c_k form an orthonormal coordinate system for L². Coefficients are stored
//! on the square lattice |k_j| ≤ n; in 1D the mode is written (k, 0).

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mode = [i64; 2];

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(m: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(f) = p.1.get(&(m, inverse)) {
            return f.clone();
        }
        let f = if inverse { p.0.plan_fft_inverse(m) } else { p.0.plan_fft_forward(m) };
        p.1.insert((m, inverse), f.clone());
        f
    })
}

/// Smallest integer ≥ `min` whose prime factors are all in {2, 3, 5}.
pub fn fft_friendly(min: usize) -> usize {
    let mut m = min.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Truncated index set {k in Z^D : |k_j| ≤ n} plus the oversampling factor
/// used for grid synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    n: usize,
    q: usize,
}

impl Lattice {
    pub fn new(dim: usize, n: usize, q: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Lattice(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < 1 {
            return Err(Error::Lattice("cutoff n must be at least 1".into()));
        }
        if q < 1 {
            return Err(Error::Lattice("oversample factor q must be at least 1".into()));
        }
        Ok(Self { dim, n, q })
    }

    /// 1D lattice with oversampling 2.
    ///
    /// # Panics
    /// If `n == 0`.
    pub fn line(n: usize) -> Self {
        Self::new(1, n, 2).expect("n >= 1")
    }

    /// 2D lattice with oversampling 2.
    ///
    /// # Panics
    /// If `n == 0`.
    pub fn square(n: usize) -> Self {
        Self::new(2, n, 2).expect("n >= 1")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn side(&self) -> usize {
        2 * self.n + 1
    }
    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid points per axis used by `to_grid`.
    pub fn grid_size(&self) -> usize {
        fft_friendly(self.q * self.side())
    }

    /// Same dimension and oversampling, different cutoff.
    pub fn with_cutoff(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.q)
    }

    pub fn contains(&self, k: Mode) -> bool {
        let n = self.n as i64;
        match self.dim {
            1 => k[0].abs() <= n && k[1] == 0,
            _ => k[0].abs() <= n && k[1].abs() <= n,
        }
    }

    pub fn index(&self, k: Mode) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let n = self.n as i64;
        let s = self.side() as i64;
        Some(match self.dim {
            1 => (k[0] + n) as usize,
            _ => ((k[0] + n) * s + (k[1] + n)) as usize,
        })
    }

    pub fn mode(&self, idx: usize) -> Mode {
        let n = self.n as i64;
        let s = self.side();
        match self.dim {
            1 => [idx as i64 - n, 0],
            _ => [(idx / s) as i64 - n, (idx % s) as i64 - n],
        }
    }

    /// Index of the mode −k; the lattice is symmetric so this always exists.
    pub fn neg(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    pub fn zero_index(&self) -> usize {
        self.len() / 2
    }

    pub fn k2(&self, idx: usize) -> f64 {
        let k = self.mode(idx);
        (k[0] * k[0] + k[1] * k[1]) as f64
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.len()).map(move |i| self.mode(i))
    }
}

/// Real-space samples on the tensor grid θ_j = 2πj/m, row-major in (θ₁, θ₂).
#[derive(Clone, Debug, PartialEq)]
pub struct GridBuffer {
    pub dim: usize,
    pub m: usize,
    pub values: Vec<C64>,
}

fn transpose(buf: &mut [C64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            buf.swap(i * m + j, j * m + i);
        }
    }
}

fn fft_nd(buf: &mut [C64], dim: usize, m: usize, inverse: bool) {
    let f = plan(m, inverse);
    f.process(buf);
    if dim == 2 {
        transpose(buf, m);
        f.process(buf);
        transpose(buf, m);
    }
}

fn wrap(k: i64, m: usize) -> usize {
    k.rem_euclid(m as i64) as usize
}

/// Synthesis u(θ) = Σ c_k e^{ik·θ} on an m^D grid. Requires m ≥ 2n+1.
pub(crate) fn synth(lat: &Lattice, coeffs: &[C64], m: usize) -> Vec<C64> {
    let mut buf = vec![C64::new(0.0, 0.0); m.pow(lat.dim as u32)];
    for (i, c) in coeffs.iter().enumerate() {
        if c.re == 0.0 && c.im == 0.0 {
            continue;
        }
        let k = lat.mode(i);
        let pos = match lat.dim {
            1 => wrap(k[0], m),
            _ => wrap(k[0], m) * m + wrap(k[1], m),
        };
        buf[pos] += c;
    }
    fft_nd(&mut buf, lat.dim, m, true);
    buf
}

/// Analysis c_k = mean over grid of u e^{-ik·θ}, read back on `lat`.
pub(crate) fn analyze(lat: &Lattice, grid: &[C64], m: usize) -> Vec<C64> {
    let mut buf = grid.to_vec();
    fft_nd(&mut buf, lat.dim, m, false);
    let scale = 1.0 / (m.pow(lat.dim as u32) as f64);
    (0..lat.len())
        .map(|i| {
            let k = lat.mode(i);
            let pos = match lat.dim {
                1 => wrap(k[0], m),
                _ => wrap(k[0], m) * m + wrap(k[1], m),
            };
            buf[pos] * scale
        })
        .collect()
}

/// Grid size giving exact quadrature for an integrand of total trigonometric
/// degree `degree·n`, or exact projection of a product of degree
/// `(degree−1)·n` back onto the cutoff-n lattice.
pub(crate) fn exact_grid(lat: &Lattice, degree: usize) -> usize {
    fft_friendly((degree * lat.n + 1).max(lat.side()))
}

/// Periodic field given by its Fourier coefficients on a lattice.
///
/// With `real` set, c_{−k} = conj(c_k). With `zero_mode` unset, c_0 = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    lattice: Lattice,
    pub(crate) coeffs: Vec<C64>,
    real: bool,
    zero_mode: bool,
}

impl FourierField {
    pub fn zeros(lattice: Lattice, real: bool, zero_mode: bool) -> Self {
        Self { lattice, coeffs: vec![C64::new(0.0, 0.0); lattice.len()], real, zero_mode }
    }

    /// Validating constructor. Hermitian symmetry is checked to 1e-12
    /// relative to the largest coefficient.
    pub fn from_coeffs(lattice: Lattice, coeffs: Vec<C64>, real: bool, zero_mode: bool) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(Error::Mismatch(format!(
                "{} coefficients for a lattice of {} modes",
                coeffs.len(),
                lattice.len()
            )));
        }
        let f = Self { lattice, coeffs, real, zero_mode };
        if !zero_mode && f.coeffs[lattice.zero_index()] != C64::new(0.0, 0.0) {
            return Err(Error::Parameter("zero mode must vanish for a mean-zero field".into()));
        }
        if real {
            let scale = f.coeffs.iter().map(|c| c.norm()).fold(1e-300, f64::max);
            let worst =
                (0..lattice.len()).map(|i| (f.coeffs[i] - f.coeffs[lattice.neg(i)].conj()).norm()).fold(0.0, f64::max);
            if worst > 1e-12 * scale {
                return Err(Error::Parameter(format!("Hermitian symmetry violated by {worst:e}")));
            }
        }
        Ok(f)
    }

    /// Build from a mode function; the zero mode is cleared when not carried
    /// and real fields are symmetrized.
    pub fn from_fn(lattice: Lattice, real: bool, zero_mode: bool, mut f: impl FnMut(Mode) -> C64) -> Self {
        let coeffs = (0..lattice.len()).map(|i| f(lattice.mode(i))).collect();
        let mut out = Self { lattice, coeffs, real, zero_mode };
        out.enforce();
        out
    }

    /// Set c_k (and c_{−k} = conj for real fields).
    pub fn with_mode(mut self, k: Mode, c: C64) -> Self {
        if let Some(i) = self.lattice.index(k) {
            if i == self.lattice.zero_index() {
                if self.zero_mode {
                    self.coeffs[i] = if self.real { C64::new(c.re, 0.0) } else { c };
                }
            } else {
                self.coeffs[i] = c;
                if self.real {
                    let j = self.lattice.neg(i);
                    self.coeffs[j] = c.conj();
                }
            }
        }
        self
    }

    pub(crate) fn enforce(&mut self) {
        let z = self.lattice.zero_index();
        if !self.zero_mode {
            self.coeffs[z] = C64::new(0.0, 0.0);
        }
        if self.real {
            for i in 0..z {
                let j = self.lattice.neg(i);
                let avg = (self.coeffs[i] + self.coeffs[j].conj()) * 0.5;
                self.coeffs[i] = avg;
                self.coeffs[j] = avg.conj();
            }
            self.coeffs[z].im = 0.0;
        }
    }

    pub(crate) fn raw(lattice: Lattice, coeffs: Vec<C64>, real: bool, zero_mode: bool) -> Self {
        debug_assert_eq!(coeffs.len(), lattice.len());
        Self { lattice, coeffs, real, zero_mode }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }
    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }
    pub fn is_real(&self) -> bool {
        self.real
    }
    pub fn has_zero_mode(&self) -> bool {
        self.zero_mode
    }

    pub fn get(&self, k: Mode) -> C64 {
        self.lattice.index(k).map_or(C64::new(0.0, 0.0), |i| self.coeffs[i])
    }

    /// Σ|c_k|² = ∫|u|².
    pub fn mass(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Real L² pairing Re ∫ u v̄ = Σ Re(c_k conj d_k).
    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }

    /// self + a·other. Flags: real only if both are, zero mode if either carries it.
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        debug_assert_eq!(self.lattice, other.lattice);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + y * a).collect();
        Self {
            lattice: self.lattice,
            coeffs,
            real: self.real && other.real,
            zero_mode: self.zero_mode || other.zero_mode,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }
    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// Convex combination t·self + (1−t)·other.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        self.scale(t).axpy(1.0 - t, other)
    }

    /// Multiply every coefficient by a phase e^{iφ}; breaks reality.
    pub fn rotate(&self, phi: f64) -> Self {
        let z = C64::from_polar(1.0, phi);
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= z);
        out.real = false;
        out
    }

    /// Apply a per-mode complex multiplier.
    pub fn multiply(&self, mut f: impl FnMut(Mode) -> C64) -> Self {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            *c *= f(self.lattice.mode(i));
        }
        out
    }

    /// Copy common modes onto another lattice (zero-padding or truncation).
    pub fn resample(&self, lattice: &Lattice) -> Result<Self> {
        if lattice.dim() != self.lattice.dim {
            return Err(Error::Mismatch("dimension differs".into()));
        }
        let mut out = Self::zeros(*lattice, self.real, self.zero_mode);
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            *c = self.get(lattice.mode(i));
        }
        Ok(out)
    }

    /// Same lattice, new flags; re-enforces invariants.
    pub fn with_flags(&self, real: bool, zero_mode: bool) -> Self {
        let mut out = Self { real, zero_mode, ..self.clone() };
        out.enforce();
        out
    }

    pub fn to_grid(&self) -> GridBuffer {
        let m = self.lattice.grid_size();
        GridBuffer { dim: self.lattice.dim, m, values: synth(&self.lattice, &self.coeffs, m) }
    }

    /// Grid samples at an explicit size; rejects grids that alias lattice modes.
    pub fn to_grid_sized(&self, m: usize) -> Result<GridBuffer> {
        if m < self.lattice.side() {
            return Err(Error::GridTooSmall { grid: m, needed: self.lattice.side(), n: self.lattice.n });
        }
        Ok(GridBuffer { dim: self.lattice.dim, m, values: synth(&self.lattice, &self.coeffs, m) })
    }

    pub fn project(&self, spec: &ProjectionSpec) -> Self {
        let d = self.lattice.dim;
        self.multiply(|k| C64::new(spec.multiplier(k, d), 0.0))
    }

    /// (|c_0|² + Σ_{k≠0} |k|^{2s}|c_k|²)^{1/2}.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.sobolev_sq(s, true).sqrt()
    }

    /// (Σ_{k≠0} |k|^{2s}|c_k|²)^{1/2}.
    pub fn homogeneous_sobolev_norm(&self, s: f64) -> f64 {
        self.sobolev_sq(s, false).sqrt()
    }

    pub(crate) fn sobolev_sq(&self, s: f64, with_zero: bool) -> f64 {
        let z = self.lattice.zero_index();
        let mut acc = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            if i == z {
                if with_zero {
                    acc += c.norm_sqr();
                }
                continue;
            }
            let w = if s == 0.0 { 1.0 } else { self.lattice.k2(i).powf(s) };
            acc += w * c.norm_sqr();
        }
        acc
    }

    /// ∫|u|^p dθ/(2π)^D as a grid mean on the lattice's own grid.
    ///
    /// Exact for even p once the grid exceeds p·n points per axis; smaller
    /// grids are rejected. Odd p is a quadrature of a non-polynomial integrand.
    pub fn lp_integral(&self, p: u32) -> Result<f64> {
        if p == 0 {
            return Ok(1.0);
        }
        let m = self.lattice.grid_size();
        let needed = p as usize * self.lattice.n + 1;
        if m < needed {
            return Err(Error::GridTooSmall { grid: m, needed, n: self.lattice.n });
        }
        let g = synth(&self.lattice, &self.coeffs, m);
        Ok(grid_mean(&g, |z| z.norm().powi(p as i32)))
    }

    /// ∫ u^p for a real field, exact by choosing a large enough grid.
    pub fn real_power_integral(&self, p: u32) -> f64 {
        let m = exact_grid(&self.lattice, p.max(2) as usize);
        let g = synth(&self.lattice, &self.coeffs, m);
        grid_mean(&g, |z| z.re.powi(p as i32))
    }

    /// Coefficientwise product (f∗g)^(m) = f̂(m)ĝ(m).
    pub fn convolve(&self, g: &Self) -> Result<Self> {
        if self.lattice != g.lattice {
            return Err(Error::Mismatch("convolution of fields on different lattices".into()));
        }
        let coeffs = self.coeffs.iter().zip(&g.coeffs).map(|(a, b)| a * b).collect();
        Ok(Self { lattice: self.lattice, coeffs, real: self.real && g.real, zero_mode: self.zero_mode && g.zero_mode })
    }

    /// Exact coefficients of |u|² on the doubled lattice (cutoff 2n).
    pub fn modulus_squared(&self) -> Self {
        let out_lat = Lattice { n: 2 * self.lattice.n, ..self.lattice };
        let m = exact_grid(&self.lattice, 4);
        let mut g = synth(&self.lattice, &self.coeffs, m);
        g.iter_mut().for_each(|z| *z = C64::new(z.norm_sqr(), 0.0));
        let mut out = Self::raw(out_lat, analyze(&out_lat, &g, m), true, true);
        out.enforce();
        out
    }

    /// Maximum Hermitian-symmetry defect max|c_k − conj c_{−k}|.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.lattice.len())
            .map(|i| (self.coeffs[i] - self.coeffs[self.lattice.neg(i)].conj()).norm())
            .fold(0.0, f64::max)
    }
}

impl GridBuffer {
    /// Analysis back onto `lattice`; the grid must resolve every lattice mode.
    pub fn to_field(&self, lattice: &Lattice, real: bool, zero_mode: bool) -> Result<FourierField> {
        if self.dim != lattice.dim() {
            return Err(Error::Mismatch("grid and lattice dimensions differ".into()));
        }
        if self.m < lattice.side() {
            return Err(Error::GridTooSmall { grid: self.m, needed: lattice.side(), n: lattice.n() });
        }
        let mut f = FourierField::raw(*lattice, analyze(lattice, &self.values, self.m), real, zero_mode);
        f.enforce();
        Ok(f)
    }

    pub fn mean_square(&self) -> f64 {
        grid_mean(&self.values, |z| z.norm_sqr())
    }
}

pub(crate) fn grid_mean(g: &[C64], f: impl Fn(C64) -> f64) -> f64 {
    // pairwise-ish: accumulate in chunks to limit roundoff growth
    let mut total = 0.0;
    for chunk in g.chunks(1024) {
        total += chunk.iter().map(|&z| f(z)).sum::<f64>();
    }
    total / g.len() as f64
}

/// Dyadic index block Δ_j: {2^{j−1}, …, 2^j − 1} for j > 0, {0} for j = 0,
/// mirrored for j < 0. Returned as an inclusive range.
pub fn dyadic_block(j: i32) -> (i64, i64) {
    match j.cmp(&0) {
        std::cmp::Ordering::Equal => (0, 0),
        std::cmp::Ordering::Greater => (1i64 << (j - 1), (1i64 << j) - 1),
        std::cmp::Ordering::Less => {
            let (a, b) = dyadic_block(-j);
            (-b, -a)
        }
    }
}

fn vp_1d(j: i32, k: i64) -> f64 {
    if j < 0 {
        return vp_1d(-j, -k);
    }
    let (a, b) = dyadic_block(j);
    let lo = dyadic_block(j - 1).0 - 1;
    let hi = dyadic_block(j + 1).1 + 1;
    if (a..=b).contains(&k) {
        1.0
    } else if k > lo && k < a {
        (k - lo) as f64 / (a - lo) as f64
    } else if k > b && k < hi {
        (hi - k) as f64 / (hi - b) as f64
    } else {
        0.0
    }
}

/// Fourier projections and multipliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProjectionSpec {
    /// Keep |k_j| ≤ m.
    Dirichlet(usize),
    /// Keep k in Δ_{j_1} × … × Δ_{j_D}.
    DyadicBlock(Vec<i32>),
    /// de la Vallée Poussin multiplier: 1 on the block, 0 outside the triple
    /// block, linear on the flanks.
    ValleePoussin(Vec<i32>),
}

impl ProjectionSpec {
    pub fn multiplier(&self, k: Mode, dim: usize) -> f64 {
        match self {
            Self::Dirichlet(m) => {
                let m = *m as i64;
                if k[..dim].iter().all(|x| x.abs() <= m) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::DyadicBlock(js) => {
                let inside = js.iter().zip(&k[..dim]).all(|(&j, &x)| {
                    let (a, b) = dyadic_block(j);
                    (a..=b).contains(&x)
                });
                if inside && js.len() == dim {
                    1.0
                } else {
                    0.0
                }
            }
            Self::ValleePoussin(js) => {
                if js.len() != dim {
                    return 0.0;
                }
                js.iter().zip(&k[..dim]).map(|(&j, &x)| vp_1d(j, x)).product()
            }
        }
    }

    /// Number of lattice points in the block Δ(J) (dyadic kinds only).
    pub fn block_size(&self) -> usize {
        match self {
            Self::DyadicBlock(js) | Self::ValleePoussin(js) => js
                .iter()
                .map(|&j| {
                    let (a, b) = dyadic_block(j);
                    (b - a + 1) as usize
                })
                .product(),
            Self::Dirichlet(m) => 2 * m + 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(lat: Lattice, real: bool, seed: u64) -> FourierField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FourierField::from_fn(lat, real, true, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn fft_friendly_sizes() {
        assert_eq!(fft_friendly(17), 18);
        assert_eq!(fft_friendly(7), 8);
        assert_eq!(fft_friendly(31), 32);
        assert_eq!(fft_friendly(121), 125);
    }

    #[test]
    fn lattice_indexing_roundtrip() {
        for lat in [Lattice::line(5), Lattice::square(3)] {
            for i in 0..lat.len() {
                let k = lat.mode(i);
                assert_eq!(lat.index(k), Some(i));
                let nk = lat.mode(lat.neg(i));
                assert_eq!(nk, [-k[0], -k[1]]);
            }
            assert_eq!(lat.mode(lat.zero_index()), [0, 0]);
        }
        assert!(Lattice::new(3, 4, 2).is_err());
        assert!(Lattice::new(1, 0, 2).is_err());
    }

    #[test]
    fn single_mode_synthesis() {
        let lat = Lattice::line(4);
        let f = FourierField::zeros(lat, false, true).with_mode([1, 0], C64::new(1.0, 0.0));
        let g = f.to_grid();
        for (j, z) in g.values.iter().enumerate() {
            let th = 2.0 * std::f64::consts::PI * j as f64 / g.m as f64;
            assert!((z - C64::from_polar(1.0, th)).norm() < 1e-13);
        }
        let back = g.to_field(&lat, false, true).unwrap();
        assert!((back.get([1, 0]) - 1.0).norm() < 1e-14);
        assert!(back.coeffs().iter().enumerate().all(|(i, c)| i == lat.index([1, 0]).unwrap() || c.norm() < 1e-14));
    }

    #[test]
    fn zero_field_roundtrip() {
        let lat = Lattice::square(3);
        let f = FourierField::zeros(lat, false, true);
        let g = f.to_grid();
        assert!(g.values.iter().all(|z| z.norm() == 0.0));
        assert_eq!(g.to_field(&lat, false, true).unwrap(), f);
    }

    // O(M²) direct DFT oracle.
    #[test]
    fn synthesis_matches_direct_sum() {
        let lat = Lattice::line(4);
        let f = random_field(lat, false, 1);
        let g = f.to_grid();
        for j in 0..g.m {
            let th = 2.0 * std::f64::consts::PI * j as f64 / g.m as f64;
            let direct: C64 = lat.modes().map(|k| f.get(k) * C64::from_polar(1.0, k[0] as f64 * th)).sum();
            assert!((direct - g.values[j]).norm() < 1e-12);
        }
        let lat2 = Lattice::square(2);
        let f2 = random_field(lat2, false, 2);
        let g2 = f2.to_grid();
        let m = g2.m;
        for a in 0..m {
            for b in 0..m {
                let t1 = 2.0 * std::f64::consts::PI * a as f64 / m as f64;
                let t2 = 2.0 * std::f64::consts::PI * b as f64 / m as f64;
                let direct: C64 =
                    lat2.modes().map(|k| f2.get(k) * C64::from_polar(1.0, k[0] as f64 * t1 + k[1] as f64 * t2)).sum();
                assert!((direct - g2.values[a * m + b]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        for (lat, seed) in [(Lattice::line(8), 3), (Lattice::square(8), 4)] {
            let f = random_field(lat, false, seed);
            let g = f.to_grid();
            let back = g.to_field(&lat, false, true).unwrap();
            let err = f.coeffs().iter().zip(back.coeffs()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "roundtrip {err}");
            assert!((g.mean_square() - f.mass()).abs() < 1e-12 * f.mass());
        }
    }

    #[test]
    fn grid_too_small_rejected() {
        let lat = Lattice::line(8);
        let f = random_field(lat, false, 5);
        assert!(matches!(f.to_grid_sized(10), Err(Error::GridTooSmall { .. })));
        let g = GridBuffer { dim: 1, m: 10, values: vec![C64::new(0.0, 0.0); 10] };
        assert!(g.to_field(&lat, false, true).is_err());
    }

    #[test]
    fn dirichlet_projection() {
        let lat = Lattice::line(6);
        let f = FourierField::zeros(lat, false, true)
            .with_mode([1, 0], C64::new(1.0, 0.0))
            .with_mode([3, 0], C64::new(1.0, 0.0));
        let p = f.project(&ProjectionSpec::Dirichlet(2));
        assert_eq!(p.get([1, 0]), C64::new(1.0, 0.0));
        assert_eq!(p.get([3, 0]), C64::new(0.0, 0.0));
    }

    #[test]
    fn dyadic_blocks() {
        assert_eq!(dyadic_block(2), (2, 3));
        assert_eq!(dyadic_block(3), (4, 7));
        assert_eq!(dyadic_block(-2), (-3, -2));
        assert_eq!(dyadic_block(0), (0, 0));
        let lat = Lattice::line(10);
        let f = random_field(lat, false, 6);
        let p = f.project(&ProjectionSpec::DyadicBlock(vec![2]));
        let kept: Vec<i64> = lat.modes().filter(|&k| p.get(k).norm() > 0.0).map(|k| k[0]).collect();
        assert_eq!(kept, vec![2, 3]);
    }

    #[test]
    fn vallee_poussin_reproduces_block() {
        let lat = Lattice::line(20);
        let f = random_field(lat, false, 7);
        let pj = f.project(&ProjectionSpec::DyadicBlock(vec![3]));
        let kpj = pj.project(&ProjectionSpec::ValleePoussin(vec![3]));
        assert!(pj.sub(&kpj).mass() < 1e-28);
        let vp = ProjectionSpec::ValleePoussin(vec![3]);
        // vanishes outside Δ_2 ∪ Δ_3 ∪ Δ_4 = {2..15}
        assert_eq!(vp.multiplier([1, 0], 1), 0.0);
        assert_eq!(vp.multiplier([16, 0], 1), 0.0);
        assert!(vp.multiplier([2, 0], 1) > 0.0 && vp.multiplier([15, 0], 1) > 0.0);
        assert_eq!(vp.multiplier([-5, 0], 1), 0.0);
        assert_eq!(ProjectionSpec::ValleePoussin(vec![-3]).multiplier([-5, 0], 1), 1.0);
    }

    #[test]
    fn sobolev_examples() {
        let lat = Lattice::line(4);
        let f = FourierField::zeros(lat, false, true).with_mode([1, 0], C64::new(1.0, 0.0));
        assert!((f.sobolev_norm(1.0) - 1.0).abs() < 1e-15);
        let g = FourierField::zeros(lat, false, true).with_mode([2, 0], C64::new(1.0, 0.0));
        assert!((g.sobolev_norm(-1.0) - 0.5).abs() < 1e-15);
        let h = random_field(lat, false, 8);
        assert!((h.sobolev_norm(0.0).powi(2) - h.mass()).abs() < 1e-12 * h.mass());
    }

    #[test]
    fn lp_examples() {
        let lat = Lattice::new(1, 4, 3).unwrap();
        let e = FourierField::zeros(lat, false, true).with_mode([1, 0], C64::new(1.0, 0.0));
        assert!((e.lp_integral(4).unwrap() - 1.0).abs() < 1e-14);
        // 2cosθ: ∫(2cosθ)^4 dθ/2π = 16·3/8 = 6
        let c = FourierField::zeros(lat, true, true).with_mode([1, 0], C64::new(1.0, 0.0));
        assert!((c.lp_integral(4).unwrap() - 6.0).abs() < 1e-13);
        assert_eq!(FourierField::zeros(lat, false, true).lp_integral(6).unwrap(), 0.0);
        let f = random_field(lat, false, 9);
        assert!((f.lp_integral(2).unwrap() - f.mass()).abs() < 1e-12 * f.mass());
        let low_q = Lattice::new(1, 4, 1).unwrap();
        let r = random_field(low_q, false, 10).lp_integral(6);
        assert!(matches!(r, Err(Error::GridTooSmall { .. })));
    }

    // |u|^4 oracle from coefficient convolution: ∫|u|^4 = Σ_m |(|u|²)^(m)|².
    #[test]
    fn l4_matches_coefficient_sum() {
        let lat = Lattice::new(2, 3, 2).unwrap();
        let f = random_field(lat, false, 11);
        let mut rho: HashMap<Mode, C64> = HashMap::new();
        for a in lat.modes() {
            for b in lat.modes() {
                let m = [a[0] - b[0], a[1] - b[1]];
                *rho.entry(m).or_default() += f.get(a) * f.get(b).conj();
            }
        }
        let oracle: f64 = rho.values().map(|c| c.norm_sqr()).sum();
        assert!((f.lp_integral(4).unwrap() - oracle).abs() < 1e-12 * oracle);
        let ms = f.modulus_squared();
        for (m, c) in &rho {
            assert!((ms.get(*m) - c).norm() < 1e-12);
        }
    }

    #[test]
    fn convolution_examples() {
        let lat = Lattice::line(3);
        let f = FourierField::zeros(lat, false, true).with_mode([1, 0], C64::new(2.0, 0.0));
        let g = FourierField::zeros(lat, false, true).with_mode([1, 0], C64::new(3.0, 0.0));
        assert_eq!(f.convolve(&g).unwrap().get([1, 0]), C64::new(6.0, 0.0));
        let one = FourierField::from_fn(lat, true, true, |_| C64::new(1.0, 0.0));
        let r = random_field(lat, false, 12);
        assert_eq!(r.convolve(&one).unwrap().coeffs(), r.coeffs());
        // |e^{iθ}|² ∗ cos 2θ = 0
        let u = FourierField::zeros(lat, false, true).with_mode([1, 0], C64::new(1.0, 0.0));
        let rho = u.modulus_squared().resample(&lat).unwrap();
        let v = FourierField::zeros(lat, true, true).with_mode([2, 0], C64::new(0.5, 0.0));
        assert!(rho.convolve(&v).unwrap().mass() < 1e-28);
        assert!(f.convolve(&FourierField::zeros(Lattice::line(4), false, true)).is_err());
    }

    #[test]
    fn convolution_matches_grid_product() {
        let lat = Lattice::line(6);
        let f = random_field(lat, true, 13);
        let g = random_field(lat, true, 14);
        let c = f.convolve(&g).unwrap();
        // (f∗g)(θ) = ∫ f(θ−φ)g(φ) dφ/2π on a resolved grid
        let m = 64;
        let fg = f.to_grid_sized(m).unwrap().values;
        let gg = g.to_grid_sized(m).unwrap().values;
        let cg = c.to_grid_sized(m).unwrap().values;
        for j in 0..m {
            let direct: C64 = (0..m).map(|l| fg[(j + m - l) % m] * gg[l]).sum::<C64>() / m as f64;
            assert!((direct - cg[j]).norm() < 1e-10 * (1.0 + cg[j].norm()));
        }
    }

    #[test]
    fn from_coeffs_validation() {
        let lat = Lattice::line(2);
        let mut c = vec![C64::new(0.0, 0.0); 5];
        c[3] = C64::new(1.0, 1.0);
        assert!(FourierField::from_coeffs(lat, c.clone(), true, false).is_err());
        c[1] = C64::new(1.0, -1.0);
        assert!(FourierField::from_coeffs(lat, c.clone(), true, false).is_ok());
        c[2] = C64::new(1.0, 0.0);
        assert!(FourierField::from_coeffs(lat, c, true, false).is_err());
    }

    #[test]
    fn real_cubic_integral() {
        // (2cosθ)^3 integrates to zero; (1 + 2cosθ)^3 = 1 + 3·2 + 0 + ... = 1 + 6·... check by expansion
        let lat = Lattice::line(3);
        let c = FourierField::zeros(lat, true, true).with_mode([1, 0], C64::new(1.0, 0.0));
        assert!(c.real_power_integral(3).abs() < 1e-14);
        let d = c.clone().with_mode([0, 0], C64::new(1.0, 0.0));
        // ∫(1+2cos)^3 = 1 + 3∫4cos² = 1 + 6 = 7
        assert!((d.real_power_integral(3) - 7.0).abs() < 1e-13);
    }
}
