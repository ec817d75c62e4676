//! Small statistical helpers shared by the estimators.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated sum, order-stable.
pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs.iter().copied()) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    sum(xs.iter().map(|x| (x - m) * (x - m))) / (n - 1) as f64
}

/// Value with a one-sigma Monte Carlo error bar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    pub fn of_mean(xs: &[f64]) -> Self {
        Self { value: mean(xs), stderr: (variance(xs) / xs.len().max(1) as f64).sqrt() }
    }

    /// |a − b| within `k` combined standard errors.
    pub fn agrees(&self, other: &Self, k: f64) -> bool {
        (self.value - other.value).abs() <= k * (self.stderr.powi(2) + other.stderr.powi(2)).sqrt()
    }
}

/// Delete-one jackknife for a statistic computed from per-sample columns.
///
/// `stat` receives the column sums over the retained samples and the count.
/// Uses the sums trick so the cost is O(samples · columns).
pub fn jackknife_sums(cols: &[Vec<f64>], stat: impl Fn(&[f64], usize) -> f64) -> Estimate {
    let n = cols.first().map_or(0, |c| c.len());
    let totals: Vec<f64> = cols.iter().map(|c| sum(c.iter().copied())).collect();
    let full = stat(&totals, n);
    if n < 2 {
        return Estimate::new(full, f64::NAN);
    }
    let mut buf = totals.clone();
    let mut leave = Vec::with_capacity(n);
    for i in 0..n {
        for (b, (t, c)) in buf.iter_mut().zip(totals.iter().zip(cols)) {
            *b = t - c[i];
        }
        leave.push(stat(&buf, n - 1));
    }
    let lm = mean(&leave);
    let var = (n - 1) as f64 / n as f64 * sum(leave.iter().map(|x| (x - lm) * (x - lm)));
    Estimate::new(full, var.sqrt())
}

/// Ordinary least squares y = a + b x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx = sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let syy = sum(y.iter().map(|b| (b - my) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = sum(x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)));
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_stderr = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    LinearFit { intercept, slope, slope_stderr, r_squared }
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lam))
}

fn kolmogorov_q(lam: f64) -> f64 {
    if lam < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let t = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lam).powi(2)).exp();
        s += t;
        if t.abs() < 1e-12 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// Empirical quantile by linear interpolation, `p` in [0, 1].
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// log Σ exp(x_i), stable.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + sum(xs.iter().map(|x| (x - m).exp())).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(xs), 2.0);
    }

    #[test]
    fn jackknife_of_mean_matches_stderr() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let jk = jackknife_sums(&[xs.clone()], |s, n| s[0] / n as f64);
        let direct = Estimate::of_mean(&xs);
        assert!((jk.value - direct.value).abs() < 1e-12);
        assert!((jk.stderr - direct.stderr).abs() < 1e-10);
    }

    #[test]
    fn fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let (_, p2) = ks_two_sample(&a, &b);
        assert!(p2 < 1e-6);
    }

    #[test]
    fn lse_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
